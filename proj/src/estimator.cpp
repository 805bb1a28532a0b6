#include "qars/estimator.hpp"

#include <cmath>

#include "qars/artifact.hpp"

namespace qars {

std::string mode_name(EstimatorMode mode) {
  switch (mode) {
    case EstimatorMode::reference:
      return "reference";
    case EstimatorMode::reference_free:
      return "reference-free";
    case EstimatorMode::cross:
      return "cross";
  }
  return "?";
}

EstimatorMode mode_from_string(const std::string& s) {
  if (s == "reference") return EstimatorMode::reference;
  if (s == "reference-free" || s == "reference_free")
    return EstimatorMode::reference_free;
  if (s == "cross") return EstimatorMode::cross;
  throw ValueError("unknown estimator mode: " + s);
}

std::size_t feature_width(EstimatorMode mode, std::size_t dim) {
  switch (mode) {
    case EstimatorMode::reference:
      return 6 * dim;
    case EstimatorMode::reference_free:
      return 4 * dim;
    case EstimatorMode::cross:
      return dim;
  }
  return 0;
}

template <typename T>
Tensor<T> combine_features(const Tensor<T>& h, const Tensor<T>* s,
                           const Tensor<T>* r, EstimatorMode mode) {
  if (mode == EstimatorMode::cross) {
    throw ValueError(
        "combine_features: cross mode feeds pooled encodings directly");
  }
  if (s == nullptr) {
    throw ValueError("combine_features: source embedding is required");
  }
  if (h.shape() != s->shape()) {
    throw ShapeError("combine_features: dim mismatch " + shape_str(h.shape()) +
                     " vs " + shape_str(s->shape()));
  }
  if (mode == EstimatorMode::reference) {
    if (r == nullptr) {
      throw ValueError("combine_features: reference embedding is required");
    }
    if (h.shape() != r->shape()) {
      throw ShapeError("combine_features: dim mismatch " +
                       shape_str(h.shape()) + " vs " + shape_str(r->shape()));
    }
    Tensor<T> features = concat_last_axis(h, *r);
    features = concat_last_axis(features, mul(h, *s));
    features = concat_last_axis(features, mul(h, *r));
    features = concat_last_axis(features, vabs(sub(h, *s)));
    features = concat_last_axis(features, vabs(sub(h, *r)));
    return features;
  }
  Tensor<T> features = concat_last_axis(h, *s);
  features = concat_last_axis(features, mul(h, *s));
  features = concat_last_axis(features, vabs(sub(h, *s)));
  return features;
}

template <typename T>
RegressorHead<T>::RegressorHead(std::size_t in_width, std::size_t hidden1,
                                std::size_t hidden2)
    : in_width(in_width), hidden1(hidden1), hidden2(hidden2) {
  if (in_width == 0 || hidden1 == 0 || hidden2 == 0) {
    throw ConfigError("regressor head: widths must be positive");
  }
  w1 = Tensor<T>::zeros({in_width, hidden1}, true);
  b1 = Tensor<T>::zeros({hidden1}, true);
  w2 = Tensor<T>::zeros({hidden1, hidden2}, true);
  b2 = Tensor<T>::zeros({hidden2}, true);
  w3 = Tensor<T>::zeros({hidden2, 1}, true);
  b3 = Tensor<T>::zeros({1}, true);
}

template <typename T>
void RegressorHead<T>::init(Rng& rng) {
  const auto glorot = [&rng](Tensor<T>& w) {
    const double stddev =
        std::sqrt(2.0 / static_cast<double>(w.dim(0) + w.dim(1)));
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  };
  glorot(w1);
  glorot(w2);
  glorot(w3);
}

template <typename T>
Tensor<T> RegressorHead<T>::forward(const Tensor<T>& features,
                                    const DropoutCtx* dropout_ctx) const {
  if (features.shape() != Shape{in_width}) {
    throw ShapeError("regressor head: features " + shape_str(features.shape()) +
                     ", expected [" + std::to_string(in_width) + "]");
  }
  const bool drop = dropout_ctx != nullptr && dropout_ctx->rate > 0.0;
  Tensor<T> x = reshape(features, {1, in_width});
  x = vtanh(add(matmul(x, w1), reshape(b1, {1, hidden1})));
  if (drop) x = dropout(x, dropout_ctx->rate, *dropout_ctx->rng);
  x = vtanh(add(matmul(x, w2), reshape(b2, {1, hidden2})));
  if (drop) x = dropout(x, dropout_ctx->rate, *dropout_ctx->rng);
  x = add(matmul(x, w3), reshape(b3, {1, 1}));
  return reshape(x, {1});
}

template <typename T>
std::vector<Tensor<T>> RegressorHead<T>::params() const {
  return {w1, b1, w2, b2, w3, b3};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> RegressorHead<T>::named_params()
    const {
  return {{"head.w1", w1}, {"head.b1", b1}, {"head.w2", w2},
          {"head.b2", b2}, {"head.w3", w3}, {"head.b3", b3}};
}

template <typename T>
EstimatorModel<T>::EstimatorModel(EncoderModel<T> encoder, text::Vocab vocab,
                                  RegressorHead<T> head, EstimatorMode mode)
    : encoder_(std::move(encoder)),
      vocab_(std::move(vocab)),
      head_(std::move(head)),
      mode_(mode) {
  const std::size_t want = feature_width(mode_, encoder_.config().dim);
  if (head_.in_width != want) {
    throw ConfigError("estimator: head input width " +
                      std::to_string(head_.in_width) + " but " +
                      mode_name(mode_) + " mode with dim " +
                      std::to_string(encoder_.config().dim) + " produces " +
                      std::to_string(want));
  }
  if (vocab_.size() != encoder_.config().vocab_size) {
    throw ConfigError("estimator: vocab has " + std::to_string(vocab_.size()) +
                      " ids but encoder expects " +
                      std::to_string(encoder_.config().vocab_size));
  }
}

template <typename T>
std::vector<ParamGroup<T>> EstimatorModel<T>::param_groups() const {
  std::vector<ParamGroup<T>> groups;
  groups.push_back({"head", head_.params()});
  for (auto& group : encoder_.param_groups()) groups.push_back(std::move(group));
  return groups;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> EstimatorModel<T>::named_params()
    const {
  auto named = encoder_.named_params();
  for (auto& entry : head_.named_params()) named.push_back(std::move(entry));
  return named;
}

template <typename T>
void EstimatorModel<T>::zero_grads() const {
  for (const auto& group : param_groups()) {
    for (const auto& p : group.params) const_cast<Tensor<T>&>(p).zero_grad();
  }
}

template <typename T>
std::vector<std::uint32_t> EstimatorModel<T>::segment_ids(
    const std::string& segment) const {
  return text::encode_ids(text::tokenize_ws(segment), vocab_,
                          /*add_bos_eos=*/true);
}

template <typename T>
Tensor<T> EstimatorModel<T>::predict_tensor(const QEInput& input,
                                            const DropoutCtx* dropout_ctx) const {
  if (mode_ == EstimatorMode::cross) {
    if (!input.source) {
      throw ValueError("estimator: cross mode needs a source segment");
    }
    const auto src_ids = text::encode_ids(text::tokenize_ws(*input.source),
                                          vocab_, /*add_bos_eos=*/false);
    const auto hyp_ids = text::encode_ids(text::tokenize_ws(input.hypothesis),
                                          vocab_, /*add_bos_eos=*/false);
    return cross_encode_predict(src_ids, hyp_ids, dropout_ctx);
  }
  if (!input.source) {
    throw ValueError("estimator: " + mode_name(mode_) +
                     " mode needs a source segment");
  }
  const auto hyp = encoder_.encode(segment_ids(input.hypothesis), dropout_ctx);
  const auto src = encoder_.encode(segment_ids(*input.source), dropout_ctx);
  if (mode_ == EstimatorMode::reference) {
    if (!input.reference) {
      throw ValueError("estimator: reference mode needs a reference segment");
    }
    const auto ref =
        encoder_.encode(segment_ids(*input.reference), dropout_ctx);
    return head_.forward(
        combine_features(hyp.pooled, &src.pooled, &ref.pooled, mode_),
        dropout_ctx);
  }
  return head_.forward(
      combine_features<T>(hyp.pooled, &src.pooled, nullptr, mode_),
      dropout_ctx);
}

template <typename T>
double EstimatorModel<T>::predict(const QEInput& input) const {
  NoGradGuard no_grad;
  return static_cast<double>(predict_tensor(input, nullptr).item());
}

template <typename T>
double EstimatorModel<T>::predict(const QERecord& record) const {
  return predict(record.input());
}

template <typename T>
Tensor<T> EstimatorModel<T>::cross_encode_predict(
    std::span<const std::uint32_t> source_ids,
    std::span<const std::uint32_t> hyp_ids,
    const DropoutCtx* dropout_ctx) const {
  if (mode_ != EstimatorMode::cross) {
    throw ValueError("cross_encode_predict: model is in " + mode_name(mode_) +
                     " mode");
  }
  // [BOS] source [EOS] hypothesis [EOS] as one sequence.
  std::vector<std::uint32_t> ids;
  ids.reserve(source_ids.size() + hyp_ids.size() + 3);
  ids.push_back(text::Vocab::kBos);
  ids.insert(ids.end(), source_ids.begin(), source_ids.end());
  ids.push_back(text::Vocab::kEos);
  ids.insert(ids.end(), hyp_ids.begin(), hyp_ids.end());
  ids.push_back(text::Vocab::kEos);
  if (ids.size() > encoder_.config().max_seq_len) {
    throw ValueError("cross_encode_predict: combined sequence of " +
                     std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                     std::to_string(encoder_.config().max_seq_len));
  }
  const auto encoded = encoder_.encode(ids, dropout_ctx);
  return head_.forward(encoded.pooled, dropout_ctx);
}

template <typename T>
Tensor<T> EstimatorModel<T>::predict_from_embeddings(
    const SegmentEmbeddings<T>& h, const SegmentEmbeddings<T>* s,
    const SegmentEmbeddings<T>* r) const {
  if (mode_ == EstimatorMode::cross) {
    return head_.forward(h.pooled);
  }
  return head_.forward(combine_features(
      h.pooled, s != nullptr ? &s->pooled : nullptr,
      r != nullptr ? &r->pooled : nullptr, mode_));
}

void save_estimator(const EstimatorModel<float>& model,
                    const std::filesystem::path& dir) {
  auto fields = encoder_config_fields(model.encoder().config());
  fields.emplace_back("mode", mode_name(model.mode()));
  fields.emplace_back("head_in_width", std::to_string(model.head().in_width));
  fields.emplace_back("head_hidden1", std::to_string(model.head().hidden1));
  fields.emplace_back("head_hidden2", std::to_string(model.head().hidden2));
  artifact::save(dir, "estimator", fields, model.named_params());
  model.vocab().save(dir / "vocab.txt");
}

EstimatorModel<float> load_estimator(const std::filesystem::path& dir) {
  const auto meta = artifact::read_metadata(dir);
  if (meta.kind != "estimator") {
    throw FormatError("model artifact: kind '" + meta.kind +
                      "', expected 'estimator'");
  }
  EncoderModel<float> encoder(encoder_config_from_metadata(meta));
  RegressorHead<float> head(std::stoull(meta.field("head_in_width")),
                            std::stoull(meta.field("head_hidden1")),
                            std::stoull(meta.field("head_hidden2")));
  auto vocab = text::Vocab::load(dir / "vocab.txt");
  EstimatorModel<float> model(std::move(encoder), std::move(vocab),
                              std::move(head),
                              mode_from_string(meta.field("mode")));
  artifact::assign_params(model.named_params(), meta,
                          artifact::read_params(dir, meta));
  return model;
}

#define QARS_INSTANTIATE_ESTIMATOR(T)                                        \
  template Tensor<T> combine_features<T>(const Tensor<T>&, const Tensor<T>*, \
                                         const Tensor<T>*, EstimatorMode);   \
  template struct RegressorHead<T>;                                          \
  template class EstimatorModel<T>;

QARS_INSTANTIATE_ESTIMATOR(float)
QARS_INSTANTIATE_ESTIMATOR(double)
#undef QARS_INSTANTIATE_ESTIMATOR

}  // namespace qars
