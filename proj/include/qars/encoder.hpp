// encoder.hpp -- transformer encoder producing per-token and pooled segment
// embeddings, with depth-ordered parameter groups for freezing and layer-wise
// learning rates. Also reads/writes externally precomputed embeddings.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qars/rng.hpp"
#include "qars/tensor.hpp"

namespace qars {

enum class Positional { sinusoidal, learned };

std::string positional_name(Positional p);
Positional positional_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_seq_len = 128;
  Positional positional = Positional::sinusoidal;

  std::size_t ff_hidden() const { return 4 * dim; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Dropout is active only when a context is supplied (training forwards).
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
struct SegmentEmbeddings {
  Tensor<T> tokens;  // [n x d]
  Tensor<T> pooled;  // [d], arithmetic mean of the token vectors

  static SegmentEmbeddings from_tokens(Tensor<T> token_matrix);
};

template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>> params;
};

template <typename T>
struct EncoderLayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
};

// Pre-norm transformer: x + Attn(LN(x)), x + FF(LN(x)), final layer norm.
// Attention dropout sits on the softmax weights, feed-forward dropout on the
// FF output, both rated by the training config.
template <typename T>
class EncoderModel {
 public:
  explicit EncoderModel(EncoderConfig config);  // zero-initialized

  void init(Rng& rng);

  const EncoderConfig& config() const { return config_; }

  // [embeddings, layer_1, ..., layer_L]; the final layer norm belongs to the
  // topmost group. Groups partition the parameters and the order is stable.
  std::vector<ParamGroup<T>> param_groups() const;
  std::vector<Tensor<T>> all_params() const;
  // Named in artifact-manifest order (the flattened group order).
  std::vector<std::pair<std::string, Tensor<T>>> named_params() const;

  SegmentEmbeddings<T> encode(std::span<const std::uint32_t> ids,
                              const DropoutCtx* dropout = nullptr) const;

  Tensor<T>& embedding_table() { return embed_; }
  const Tensor<T>& embedding_table() const { return embed_; }

 private:
  Tensor<T> encode_tokens(std::span<const std::uint32_t> ids,
                          const DropoutCtx* dropout) const;

  EncoderConfig config_;
  Tensor<T> embed_;                        // [vocab x d]
  std::optional<Tensor<T>> positional_;    // [max_seq_len x d] when learned
  std::vector<EncoderLayerParams<T>> layers_;
  Tensor<T> final_gain_, final_bias_;
};

// QEEMB embedding file (little-endian): magic "QEEMB1\n", u32 dim, u32
// segment count; per segment u32 n then n*dim float32 row-major.
template <typename T>
std::vector<SegmentEmbeddings<T>> load_precomputed(
    const std::filesystem::path& path, std::size_t expected_dim = 0);
template <typename T>
void save_precomputed(const std::filesystem::path& path,
                      const std::vector<SegmentEmbeddings<T>>& segments);

// Model artifact: a directory holding metadata (text key-value config plus an
// ordered parameter manifest with name, shape and byte offset) and params.bin
// (float32 little-endian in manifest order, FNV-1a checksummed).
void save_model(const EncoderModel<float>& model,
                const std::filesystem::path& dir);
EncoderModel<float> load_model(const std::filesystem::path& dir);

// Encoder config <-> artifact metadata rows (shared with the estimator
// artifact, which embeds an encoder).
namespace artifact {
struct Metadata;
}
std::vector<std::pair<std::string, std::string>> encoder_config_fields(
    const EncoderConfig& config);
EncoderConfig encoder_config_from_metadata(const artifact::Metadata& meta);

}  // namespace qars
