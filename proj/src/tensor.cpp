#include "qars/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "qars/kernels.hpp"

namespace qars {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) out << 'x';
    out << s[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  std::vector<T> v(shape_numel(shape), T{0});
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  std::vector<T> v(n * n, T{0});
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T{1};
  return Tensor(Shape{n, n}, std::move(v));
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), T{0});
  return node_->grad;
}

template <typename T>
std::vector<T>& Tensor<T>::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), T{0});
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), T{0});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a scalar, shape is " + shape_str(shape()));
  }
  return node_->values[0];
}

namespace {

template <typename T>
using BackpropFn = std::function<void(
    const std::vector<T>&,
    const std::function<std::vector<T>&(std::size_t)>&)>;

// Central op constructor: computes nothing itself, just wires the graph when
// recording is on and some input needs grad.
template <typename T>
Tensor<T> op_output(const char* op, Shape shape, std::vector<T> values,
                    const std::vector<Tensor<T>>& inputs, BackpropFn<T> fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->op = op;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backprop = std::move(fn);
  }
  return Tensor<T>::wrap(std::move(node));
}

template <typename T>
void check_equal_shapes(const char* op, const Tensor<T>& a,
                        const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: arguments must be 2-D, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  kernels::matmul_nn(a.values().data(), b.values().data(), out.data(), m, k,
                     n);
  auto an = a.node();
  auto bn = b.node();
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return op_output<T>(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [an, bn, m, k, n, need_a, need_b](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& parent_buf) {
        if (need_a) {
          // dA = dC * B^T
          kernels::matmul_nt(up.data(), bn->values.data(),
                             parent_buf(0).data(), m, n, k);
        }
        if (need_b) {
          // dB = A^T * dC
          kernels::matmul_tn(an->values.data(), up.data(),
                             parent_buf(1).data(), k, m, n);
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_equal_shapes("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] + b.values()[i];
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return op_output<T>(
      "add", a.shape(), std::move(out), {a, b},
      [need_a, need_b](const std::vector<T>& up,
                       const std::function<std::vector<T>&(std::size_t)>& pb) {
        if (need_a) {
          auto& ga = pb(0);
          for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
        }
        if (need_b) {
          auto& gb = pb(1);
          for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i];
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_equal_shapes("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] - b.values()[i];
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return op_output<T>(
      "sub", a.shape(), std::move(out), {a, b},
      [need_a, need_b](const std::vector<T>& up,
                       const std::function<std::vector<T>&(std::size_t)>& pb) {
        if (need_a) {
          auto& ga = pb(0);
          for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
        }
        if (need_b) {
          auto& gb = pb(1);
          for (std::size_t i = 0; i < up.size(); ++i) gb[i] -= up[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_equal_shapes("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return op_output<T>(
      "mul", a.shape(), std::move(out), {a, b},
      [an, bn, need_a, need_b](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& pb) {
        if (need_a) {
          auto& ga = pb(0);
          for (std::size_t i = 0; i < up.size(); ++i)
            ga[i] += up[i] * bn->values[i];
        }
        if (need_b) {
          auto& gb = pb(1);
          for (std::size_t i = 0; i < up.size(); ++i)
            gb[i] += up[i] * an->values[i];
        }
      });
}

template <typename T>
Tensor<T> vabs(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::abs(a.values()[i]);
  auto an = a.node();
  return op_output<T>(
      "abs", a.shape(), std::move(out), {a},
      [an](const std::vector<T>& up,
           const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (std::size_t i = 0; i < up.size(); ++i) {
          const T x = an->values[i];
          // sign(0) = 0, the standard subgradient choice.
          const T s = (x > T{0}) ? T{1} : (x < T{0} ? T{-1} : T{0});
          ga[i] += up[i] * s;
        }
      });
}

template <typename T>
Tensor<T> vtanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::tanh(a.values()[i]);
  // d tanh = 1 - tanh^2, so saving the output is enough.
  auto saved = std::make_shared<std::vector<T>>(out);
  return op_output<T>(
      "tanh", a.shape(), std::move(out), {a},
      [saved](const std::vector<T>& up,
              const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (std::size_t i = 0; i < up.size(); ++i) {
          const T y = (*saved)[i];
          ga[i] += up[i] * (T{1} - y * y);
        }
      });
}

template <typename T>
Tensor<T> concat_last_axis(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0) {
    throw ShapeError("concat_last_axis: rank mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError(
          "concat_last_axis: shapes must agree on all but the last axis, " +
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  const std::size_t last = a.rank() - 1;
  const std::size_t wa = a.dim(last), wb = b.dim(last);
  const std::size_t rows = a.numel() / wa;
  Shape out_shape = a.shape();
  out_shape[last] = wa + wb;
  std::vector<T> out(rows * (wa + wb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * wa, wa, out.data() + r * (wa + wb));
    std::copy_n(b.values().data() + r * wb, wb,
                out.data() + r * (wa + wb) + wa);
  }
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return op_output<T>(
      "concat_last_axis", std::move(out_shape), std::move(out), {a, b},
      [rows, wa, wb, need_a, need_b](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& pb) {
        const std::size_t w = wa + wb;
        if (need_a) {
          auto& ga = pb(0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < wa; ++j)
              ga[r * wa + j] += up[r * w + j];
        }
        if (need_b) {
          auto& gb = pb(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < wb; ++j)
              gb[r * wb + j] += up[r * w + wa + j];
        }
      });
}

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>* b) {
  const bool binary = kind == EwKind::add || kind == EwKind::sub ||
                      kind == EwKind::mul || kind == EwKind::concat_last_axis;
  if (binary && b == nullptr) {
    throw ShapeError("elementwise: binary kind needs a second argument");
  }
  if (!binary && b != nullptr) {
    throw ShapeError("elementwise: unary kind got a second argument");
  }
  switch (kind) {
    case EwKind::add:
      return add(a, *b);
    case EwKind::sub:
      return sub(a, *b);
    case EwKind::mul:
      return mul(a, *b);
    case EwKind::abs:
      return vabs(a);
    case EwKind::tanh:
      return vtanh(a);
    case EwKind::concat_last_axis:
      return concat_last_axis(a, *b);
  }
  throw ValueError("elementwise: unknown kind");
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_equal_shapes("mse_loss", pred, target);
  if (pred.numel() == 0) throw ShapeError("mse_loss: empty input");
  const std::size_t n = pred.numel();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.values()[i] - target.values()[i];
    acc += d * d;
  }
  acc /= static_cast<T>(n);
  auto pn = pred.node();
  auto tn = target.node();
  const bool need_p = pred.requires_grad(), need_t = target.requires_grad();
  return op_output<T>(
      "mse_loss", Shape{1}, std::vector<T>{acc}, {pred, target},
      [pn, tn, n, need_p, need_t](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& pb) {
        const T scale_up = up[0] * T{2} / static_cast<T>(n);
        if (need_p) {
          auto& gp = pb(0);
          for (std::size_t i = 0; i < n; ++i)
            gp[i] += scale_up * (pn->values[i] - tn->values[i]);
        }
        if (need_t) {
          auto& gt = pb(1);
          for (std::size_t i = 0; i < n; ++i)
            gt[i] -= scale_up * (pn->values[i] - tn->values[i]);
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (const T v : a.values()) acc += v;
  return op_output<T>(
      "sum", Shape{1}, std::vector<T>{acc}, {a},
      [](const std::vector<T>& up,
         const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (auto& g : ga) g += up[0];
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * factor;
  return op_output<T>(
      "scale", a.shape(), std::move(out), {a},
      [factor](const std::vector<T>& up,
               const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * factor;
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " has " +
                     std::to_string(a.numel()) + " values, target " +
                     shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)));
  }
  return op_output<T>(
      "reshape", std::move(shape), a.values(), {a},
      [](const std::vector<T>& up,
         const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
      });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& vec, std::size_t rows) {
  if (vec.rank() != 1) {
    throw ShapeError("repeat_rows: needs a vector, got " +
                     shape_str(vec.shape()));
  }
  if (rows == 0) throw ShapeError("repeat_rows: zero rows");
  const std::size_t d = vec.dim(0);
  std::vector<T> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(vec.values().data(), d, out.data() + r * d);
  return op_output<T>(
      "repeat_rows", Shape{rows, d}, std::move(out), {vec},
      [rows, d](const std::vector<T>& up,
                const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gv = pb(0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gv[j] += up[r * d + j];
      });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& mat) {
  if (mat.rank() != 2) {
    throw ShapeError("mean_rows: needs a matrix, got " +
                     shape_str(mat.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  std::vector<T> out(d, T{0});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += mat.values()[r * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<T>(n);
  return op_output<T>(
      "mean_rows", Shape{d}, std::move(out), {mat},
      [n, d](const std::vector<T>& up,
             const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gm = pb(0);
        const T inv = T{1} / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j) gm[r * d + j] += up[j] * inv;
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& mat) {
  if (mat.rank() != 2) {
    throw ShapeError("transpose: needs a matrix, got " +
                     shape_str(mat.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out[j * n + r] = mat.values()[r * d + j];
  return op_output<T>(
      "transpose", Shape{d, n}, std::move(out), {mat},
      [n, d](const std::vector<T>& up,
             const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gm = pb(0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j)
            gm[r * d + j] += up[j * n + r];
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& mat, std::size_t first,
                     std::size_t count) {
  if (mat.rank() != 2) {
    throw ShapeError("slice_cols: needs a matrix, got " +
                     shape_str(mat.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  if (count == 0 || first + count > d) {
    throw ShapeError("slice_cols: [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of width " +
                     std::to_string(d));
  }
  std::vector<T> out(n * count);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(mat.values().data() + r * d + first, count,
                out.data() + r * count);
  return op_output<T>(
      "slice_cols", Shape{n, count}, std::move(out), {mat},
      [n, d, first, count](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gm = pb(0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < count; ++j)
            gm[r * d + first + j] += up[r * count + j];
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& mat) {
  if (mat.rank() != 2) {
    throw ShapeError("softmax_rows: needs a matrix, got " +
                     shape_str(mat.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = mat.values().data() + r * d;
    T mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T denom{0};
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = std::exp(row[j] - mx);
      denom += out[r * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= denom;
  }
  auto saved = std::make_shared<std::vector<T>>(out);
  return op_output<T>(
      "softmax_rows", mat.shape(), std::move(out), {mat},
      [n, d, saved](const std::vector<T>& up,
                    const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gm = pb(0);
        for (std::size_t r = 0; r < n; ++r) {
          const T* y = saved->data() + r * d;
          const T* g = up.data() + r * d;
          T dot{0};
          for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < d; ++j)
            gm[r * d + j] += y[j] * (g[j] - dot);
        }
      });
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& mat, const Tensor<T>& gain,
                          const Tensor<T>& bias, T eps) {
  if (mat.rank() != 2) {
    throw ShapeError("layer_norm_rows: needs a matrix, got " +
                     shape_str(mat.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm_rows: gain/bias must be [" +
                     std::to_string(d) + "], got " + shape_str(gain.shape()) +
                     " and " + shape_str(bias.shape()));
  }
  std::vector<T> out(n * d);
  auto xhat = std::make_shared<std::vector<T>>(n * d);
  auto inv_std = std::make_shared<std::vector<T>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = mat.values().data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T istd = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * istd;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain.values()[j] + bias.values()[j];
    }
  }
  auto gn = gain.node();
  const bool need_x = mat.requires_grad();
  const bool need_g = gain.requires_grad();
  const bool need_b = bias.requires_grad();
  return op_output<T>(
      "layer_norm_rows", mat.shape(), std::move(out), {mat, gain, bias},
      [n, d, xhat, inv_std, gn, need_x, need_g, need_b](
          const std::vector<T>& up,
          const std::function<std::vector<T>&(std::size_t)>& pb) {
        for (std::size_t r = 0; r < n; ++r) {
          const T* h = xhat->data() + r * d;
          const T* g = up.data() + r * d;
          if (need_g) {
            auto& gg = pb(1);
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * h[j];
          }
          if (need_b) {
            auto& gb = pb(2);
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
          }
          if (need_x) {
            // dx = istd/d * (d*gy - sum(gy) - xhat * sum(gy*xhat)),
            // with gy = upstream * gain.
            auto& gx = pb(0);
            T sum_gy{0}, sum_gyh{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T gy = g[j] * gn->values[j];
              sum_gy += gy;
              sum_gyh += gy * h[j];
            }
            const T istd = (*inv_std)[r];
            const T invd = T{1} / static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T gy = g[j] * gn->values[j];
              gx[r * d + j] +=
                  istd * (gy - invd * sum_gy - invd * h[j] * sum_gyh);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table,
                         const std::vector<std::uint32_t>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_rows: table must be 2-D, got " +
                     shape_str(table.shape()));
  }
  if (ids.empty()) throw ShapeError("embedding_rows: empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::uint32_t id : ids) {
    if (id >= v) {
      throw ShapeError("embedding_rows: id " + std::to_string(id) +
                       " out of table height " + std::to_string(v));
    }
  }
  const std::size_t n = ids.size();
  std::vector<T> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[r]) * d,
                d, out.data() + r * d);
  auto saved_ids = std::make_shared<std::vector<std::uint32_t>>(ids);
  return op_output<T>(
      "embedding_rows", Shape{n, d}, std::move(out), {table},
      [saved_ids, d](const std::vector<T>& up,
                     const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& gt = pb(0);
        for (std::size_t r = 0; r < saved_ids->size(); ++r) {
          const std::size_t base =
              static_cast<std::size_t>((*saved_ids)[r]) * d;
          for (std::size_t j = 0; j < d; ++j)
            gt[base + j] += up[r * d + j];
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValueError("dropout: rate must be in [0, 1), got " +
                     std::to_string(rate));
  }
  if (rate == 0.0) return scale(a, T{1});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(a.numel());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = rng.uniform() < rate ? T{0} : keep_scale;
    (*mask)[i] = m;
    out[i] = a.values()[i] * m;
  }
  return op_output<T>(
      "dropout", a.shape(), std::move(out), {a},
      [mask](const std::vector<T>& up,
             const std::function<std::vector<T>&(std::size_t)>& pb) {
        auto& ga = pb(0);
        for (std::size_t i = 0; i < up.size(); ++i)
          ga[i] += up[i] * (*mask)[i];
      });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, shape is " +
                     shape_str(loss.shape()));
  }
  using Node = TensorNode<T>;
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative DFS post-order; parents visited in stored order so the
  // traversal (and thus gradient accumulation order) is deterministic.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Fresh per-call buffers; persistent .grad only receives the final sums,
  // which is what makes repeated backward calls accumulate exactly.
  std::unordered_map<Node*, std::vector<T>> local;
  local.reserve(topo.size());
  local[root] = std::vector<T>{T{1}};

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    auto found = local.find(node);
    if (found == local.end()) continue;
    if (!node->backprop) continue;
    const std::vector<T>& up = found->second;
    auto parent_buf = [&local, node](std::size_t i) -> std::vector<T>& {
      Node* parent = node->parents[i].get();
      auto [slot, inserted] = local.try_emplace(parent);
      if (inserted) slot->second.assign(parent->values.size(), T{0});
      return slot->second;
    };
    node->backprop(up, parent_buf);
  }

  for (Node* node : topo) {
    auto found = local.find(node);
    if (found == local.end()) continue;
    if (node->grad.empty()) node->grad.assign(node->values.size(), T{0});
    const auto& src = found->second;
    for (std::size_t i = 0; i < src.size(); ++i) node->grad[i] += src[i];
  }
}

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                  Tensor<T> x, double eps) {
  if (eps <= 0.0) throw ValueError("grad_check: eps must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = f(x);
  if (y.numel() != 1) {
    throw ShapeError("grad_check: f must return a scalar");
  }
  backward(y);
  std::vector<T> analytic = x.grad();

  double max_rel = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T original = x.values()[i];
    x.values()[i] = original + static_cast<T>(eps);
    const double up_val = static_cast<double>(f(x).item());
    x.values()[i] = original - static_cast<T>(eps);
    const double down_val = static_cast<double>(f(x).item());
    x.values()[i] = original;
    const double numeric = (up_val - down_val) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      throw NumericError("grad_check: non-finite value at coordinate " +
                         std::to_string(i));
    }
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

#define QARS_INSTANTIATE_TENSOR(T)                                           \
  template class Tensor<T>;                                                  \
  template Tensor<T> elementwise<T>(EwKind, const Tensor<T>&,                \
                                    const Tensor<T>*);                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> vabs<T>(const Tensor<T>&);                              \
  template Tensor<T> vtanh<T>(const Tensor<T>&);                             \
  template Tensor<T> concat_last_axis<T>(const Tensor<T>&, const Tensor<T>&);\
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> sum<T>(const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                          \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                    \
  template Tensor<T> repeat_rows<T>(const Tensor<T>&, std::size_t);          \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                         \
  template Tensor<T> transpose<T>(const Tensor<T>&);                         \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t,            \
                                   std::size_t);                             \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                      \
  template Tensor<T> layer_norm_rows<T>(const Tensor<T>&, const Tensor<T>&,  \
                                        const Tensor<T>&, T);                \
  template Tensor<T> embedding_rows<T>(const Tensor<T>&,                     \
                                       const std::vector<std::uint32_t>&);   \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&);             \
  template void backward<T>(const Tensor<T>&);                               \
  template double grad_check<T>(                                             \
      const std::function<Tensor<T>(const Tensor<T>&)>&, Tensor<T>, double);

QARS_INSTANTIATE_TENSOR(float)
QARS_INSTANTIATE_TENSOR(double)
#undef QARS_INSTANTIATE_TENSOR

}  // namespace qars
