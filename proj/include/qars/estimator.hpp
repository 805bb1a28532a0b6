// estimator.hpp -- trainable sentence-level quality estimator: pooled
// segment embeddings combined into a feature vector, fed to a two-hidden-
// layer tanh regressor with a single linear output.
//
// Modes:
//   reference       h, r, h*s, h*r, |h-s|, |h-r|   (feature width 6d)
//   reference-free  h, s, h*s, |h-s|               (width 4d)
//   cross           one [BOS] source [EOS] hypothesis [EOS] sequence,
//                   average-pooled (width d)
//
// The raw output is unbounded; training targets are scores mapped to [0, 1]
// via (score-1)/4 and display values map back with 4*y+1. Pearson's r is
// unaffected by this affine choice.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qars/data.hpp"
#include "qars/encoder.hpp"
#include "qars/text.hpp"

namespace qars {

enum class EstimatorMode { reference, reference_free, cross };

std::string mode_name(EstimatorMode mode);
EstimatorMode mode_from_string(const std::string& s);

std::size_t feature_width(EstimatorMode mode, std::size_t dim);

inline double normalize_score(double score) { return (score - 1.0) / 4.0; }
inline double display_score(double raw, bool clamp = false) {
  const double s = 4.0 * raw + 1.0;
  if (!clamp) return s;
  return s < 1.0 ? 1.0 : (s > 5.0 ? 5.0 : s);
}

template <typename T>
Tensor<T> combine_features(const Tensor<T>& h, const Tensor<T>* s,
                           const Tensor<T>* r, EstimatorMode mode);

template <typename T>
struct RegressorHead {
  std::size_t in_width = 0, hidden1 = 0, hidden2 = 0;
  Tensor<T> w1, b1, w2, b2, w3, b3;

  RegressorHead() = default;
  RegressorHead(std::size_t in_width, std::size_t hidden1,
                std::size_t hidden2);  // zero-initialized
  void init(Rng& rng);

  // features: [width] vector -> scalar tensor.
  Tensor<T> forward(const Tensor<T>& features,
                    const DropoutCtx* dropout = nullptr) const;
  std::vector<Tensor<T>> params() const;
  std::vector<std::pair<std::string, Tensor<T>>> named_params() const;
};

template <typename T>
class EstimatorModel {
 public:
  EstimatorModel(EncoderModel<T> encoder, text::Vocab vocab,
                 RegressorHead<T> head, EstimatorMode mode);

  const EncoderModel<T>& encoder() const { return encoder_; }
  EncoderModel<T>& encoder() { return encoder_; }
  const text::Vocab& vocab() const { return vocab_; }
  const RegressorHead<T>& head() const { return head_; }
  EstimatorMode mode() const { return mode_; }

  // [head, embeddings, layer_1, ..., layer_L]. The head always trains at the
  // base rate; encoder group depths count from the topmost layer.
  std::vector<ParamGroup<T>> param_groups() const;
  std::vector<std::pair<std::string, Tensor<T>>> named_params() const;
  void zero_grads() const;

  // Graph-connected prediction used by training; throws ValueError when a
  // field required by the mode is missing.
  Tensor<T> predict_tensor(const QEInput& input,
                           const DropoutCtx* dropout = nullptr) const;
  // Inference: no graph, dropout off.
  double predict(const QEInput& input) const;
  double predict(const QERecord& record) const;

  Tensor<T> cross_encode_predict(std::span<const std::uint32_t> source_ids,
                                 std::span<const std::uint32_t> hyp_ids,
                                 const DropoutCtx* dropout = nullptr) const;

  // Precomputed-embedding hook: skips the encoder entirely.
  Tensor<T> predict_from_embeddings(const SegmentEmbeddings<T>& h,
                                    const SegmentEmbeddings<T>* s,
                                    const SegmentEmbeddings<T>* r) const;

  std::vector<std::uint32_t> segment_ids(const std::string& segment) const;

 private:
  EncoderModel<T> encoder_;
  text::Vocab vocab_;
  RegressorHead<T> head_;
  EstimatorMode mode_;
};

// Estimator artifact: encoder-style directory with mode and head sizes in the
// metadata plus the vocabulary alongside (vocab.txt).
void save_estimator(const EstimatorModel<float>& model,
                    const std::filesystem::path& dir);
EstimatorModel<float> load_estimator(const std::filesystem::path& dir);

}  // namespace qars
