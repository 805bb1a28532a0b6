// tensor.hpp -- dense tensors with reverse-mode automatic differentiation.
//
// Design notes:
//  - Tensors are shared handles to immutable value buffers; only gradient
//    accumulation (and in-place parameter updates between training steps)
//    mutates a tensor after creation.
//  - Ops record parent links plus a backward closure when grad recording is
//    enabled and an input requires grad. backward() visits the graph once in
//    reverse topological order; each call propagates a fresh seed of 1.0 and
//    adds into persistent .grad buffers, so repeated calls accumulate.
//  - No broadcasting: binary ops demand equal shapes, bias-style alignment
//    goes through explicit ops (repeat_rows, concat_last_axis).
//  - float is the training/serialization precision; double instantiations
//    exist for finite-difference gradient checks.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qars/common.hpp"
#include "qars/rng.hpp"

namespace qars {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Adds d(out)/d(parent_i) * upstream into the buffer returned by
  // parent_buf(i). Only called for parents that require grad.
  std::function<void(const std::vector<T>& upstream,
                     const std::function<std::vector<T>&(std::size_t)>&
                         parent_buf)>
      backprop;
};

template <typename T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Zero-filled on demand so frozen parameters never pay for buffers.
  const std::vector<T>& grad() const;
  std::vector<T>& mutable_grad();
  void zero_grad();

  T item() const;

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<TensorNode<T>> node) {
    return Tensor(std::move(node));
  }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node)
      : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

// Thread-local autograd switch; forwards run without building graphs while
// a NoGradGuard is alive (inference, finite differences).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

enum class EwKind { add, sub, mul, abs, tanh, concat_last_axis };

// Spec-facing dispatch; the named functions below are the internal surface.
template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a,
                      const Tensor<T>* b = nullptr);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> vabs(const Tensor<T>& a);
template <typename T>
Tensor<T> vtanh(const Tensor<T>& a);
template <typename T>
Tensor<T> concat_last_axis(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// [d] -> [rows x d]; backward sums over rows.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& vec, std::size_t rows);
// [n x d] -> [d] arithmetic mean over rows.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& mat);
template <typename T>
Tensor<T> transpose(const Tensor<T>& mat);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& mat, std::size_t first,
                     std::size_t count);
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& mat);
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& mat, const Tensor<T>& gain,
                          const Tensor<T>& bias, T eps = static_cast<T>(1e-5));
// Gathers rows of `table`; backward scatter-adds into the table gradient.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table,
                         const std::vector<std::uint32_t>& ids);
// Inverted dropout: kept entries scale by 1/(1-rate). Mask order is the
// row-major element order, one uniform draw per element.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng);

template <typename T>
void backward(const Tensor<T>& loss);

// Central finite differences vs. the analytic gradient of f at x.
// Returns max over coordinates of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8). Throws NumericError on non-finite values.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                  Tensor<T> x, double eps);

}  // namespace qars
