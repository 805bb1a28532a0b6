#include "qars/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "qars/artifact.hpp"

namespace qars {

std::string positional_name(Positional p) {
  return p == Positional::sinusoidal ? "sinusoidal" : "learned";
}

Positional positional_from_string(const std::string& s) {
  if (s == "sinusoidal") return Positional::sinusoidal;
  if (s == "learned") return Positional::learned;
  throw ValueError("unknown positional encoding: " + s);
}

void EncoderConfig::validate() const {
  if (vocab_size < 4) {
    throw ConfigError("encoder: vocab_size must cover the 4 reserved ids");
  }
  if (dim == 0 || heads == 0 || layers == 0 || max_seq_len == 0) {
    throw ConfigError("encoder: dim, heads, layers, max_seq_len must be >= 1");
  }
  if (dim % heads != 0) {
    throw ConfigError("encoder: dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
}

template <typename T>
SegmentEmbeddings<T> SegmentEmbeddings<T>::from_tokens(Tensor<T> token_matrix) {
  SegmentEmbeddings<T> out;
  out.pooled = mean_rows(token_matrix);
  out.tokens = std::move(token_matrix);
  return out;
}

namespace {

template <typename T>
Tensor<T> param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
}

template <typename T>
void glorot_init(Tensor<T>& w, Rng& rng) {
  const std::size_t fan_in = w.dim(0), fan_out = w.dim(1);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void normal_init(Tensor<T>& w, Rng& rng, double stddev) {
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void ones(Tensor<T>& w) {
  for (auto& v : w.values()) v = T{1};
}

// Fixed sin/cos position table; values computed in double then narrowed.
template <typename T>
Tensor<T> sinusoidal_table(std::size_t n, std::size_t d) {
  std::vector<T> values(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t j = 0; j < d; j += 2) {
      const double rate =
          std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      values[pos * d + j] = static_cast<T>(std::sin(angle));
      if (j + 1 < d) values[pos * d + j + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>(Shape{n, d}, std::move(values));
}

}  // namespace

template <typename T>
EncoderModel<T>::EncoderModel(EncoderConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim;
  embed_ = param<T>({config_.vocab_size, d});
  if (config_.positional == Positional::learned) {
    positional_ = param<T>({config_.max_seq_len, d});
  }
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.wq = param<T>({d, d});
    layer.bq = param<T>({d});
    layer.wk = param<T>({d, d});
    layer.bk = param<T>({d});
    layer.wv = param<T>({d, d});
    layer.bv = param<T>({d});
    layer.wo = param<T>({d, d});
    layer.bo = param<T>({d});
    layer.ln1_gain = param<T>({d});
    layer.ln1_bias = param<T>({d});
    layer.ln2_gain = param<T>({d});
    layer.ln2_bias = param<T>({d});
    layer.ff_w1 = param<T>({d, config_.ff_hidden()});
    layer.ff_b1 = param<T>({config_.ff_hidden()});
    layer.ff_w2 = param<T>({config_.ff_hidden(), d});
    layer.ff_b2 = param<T>({d});
    layers_.push_back(std::move(layer));
  }
  final_gain_ = param<T>({d});
  final_bias_ = param<T>({d});
  ones(final_gain_);
  for (auto& layer : layers_) {
    ones(layer.ln1_gain);
    ones(layer.ln2_gain);
  }
}

template <typename T>
void EncoderModel<T>::init(Rng& rng) {
  normal_init(embed_, rng, 0.1);
  if (positional_) normal_init(*positional_, rng, 0.1);
  for (auto& layer : layers_) {
    glorot_init(layer.wq, rng);
    glorot_init(layer.wk, rng);
    glorot_init(layer.wv, rng);
    glorot_init(layer.wo, rng);
    glorot_init(layer.ff_w1, rng);
    glorot_init(layer.ff_w2, rng);
  }
}

template <typename T>
std::vector<ParamGroup<T>> EncoderModel<T>::param_groups() const {
  std::vector<ParamGroup<T>> groups;
  groups.reserve(config_.layers + 1);
  ParamGroup<T> embeddings{"embeddings", {embed_}};
  if (positional_) embeddings.params.push_back(*positional_);
  groups.push_back(std::move(embeddings));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    ParamGroup<T> group{"layer" + std::to_string(l + 1),
                        {layer.wq, layer.bq, layer.wk, layer.bk, layer.wv,
                         layer.bv, layer.wo, layer.bo, layer.ln1_gain,
                         layer.ln1_bias, layer.ln2_gain, layer.ln2_bias,
                         layer.ff_w1, layer.ff_b1, layer.ff_w2, layer.ff_b2}};
    // The final layer norm sits on top of the stack, so it trains with the
    // topmost group.
    if (l + 1 == layers_.size()) {
      group.params.push_back(final_gain_);
      group.params.push_back(final_bias_);
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

template <typename T>
std::vector<Tensor<T>> EncoderModel<T>::all_params() const {
  std::vector<Tensor<T>> params;
  for (const auto& group : param_groups()) {
    for (const auto& p : group.params) params.push_back(p);
  }
  return params;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> EncoderModel<T>::named_params()
    const {
  std::vector<std::pair<std::string, Tensor<T>>> named;
  named.emplace_back("embed.weight", embed_);
  if (positional_) named.emplace_back("pos.weight", *positional_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    named.emplace_back(prefix + "wq", layer.wq);
    named.emplace_back(prefix + "bq", layer.bq);
    named.emplace_back(prefix + "wk", layer.wk);
    named.emplace_back(prefix + "bk", layer.bk);
    named.emplace_back(prefix + "wv", layer.wv);
    named.emplace_back(prefix + "bv", layer.bv);
    named.emplace_back(prefix + "wo", layer.wo);
    named.emplace_back(prefix + "bo", layer.bo);
    named.emplace_back(prefix + "ln1.gain", layer.ln1_gain);
    named.emplace_back(prefix + "ln1.bias", layer.ln1_bias);
    named.emplace_back(prefix + "ln2.gain", layer.ln2_gain);
    named.emplace_back(prefix + "ln2.bias", layer.ln2_bias);
    named.emplace_back(prefix + "ff.w1", layer.ff_w1);
    named.emplace_back(prefix + "ff.b1", layer.ff_b1);
    named.emplace_back(prefix + "ff.w2", layer.ff_w2);
    named.emplace_back(prefix + "ff.b2", layer.ff_b2);
  }
  named.emplace_back("final_norm.gain", final_gain_);
  named.emplace_back("final_norm.bias", final_bias_);
  return named;
}

template <typename T>
Tensor<T> EncoderModel<T>::encode_tokens(std::span<const std::uint32_t> ids,
                                         const DropoutCtx* dropout_ctx) const {
  if (ids.empty()) throw ValueError("encode: empty sequence");
  if (ids.size() > config_.max_seq_len) {
    throw ValueError("encode: sequence of " + std::to_string(ids.size()) +
                     " tokens exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  const std::size_t n = ids.size();
  const std::size_t d = config_.dim;
  const std::size_t head_dim = d / config_.heads;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  const bool drop = dropout_ctx != nullptr && dropout_ctx->rate > 0.0;

  std::vector<std::uint32_t> id_vec(ids.begin(), ids.end());
  Tensor<T> x = embedding_rows(embed_, id_vec);
  if (config_.positional == Positional::learned) {
    std::vector<std::uint32_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::uint32_t>(i);
    x = add(x, embedding_rows(*positional_, positions));
  } else {
    x = add(x, sinusoidal_table<T>(n, d));
  }

  for (const auto& layer : layers_) {
    Tensor<T> h = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias);
    Tensor<T> q = add(matmul(h, layer.wq), repeat_rows(layer.bq, n));
    Tensor<T> k = add(matmul(h, layer.wk), repeat_rows(layer.bk, n));
    Tensor<T> v = add(matmul(h, layer.wv), repeat_rows(layer.bv, n));

    Tensor<T> context;
    for (std::size_t head = 0; head < config_.heads; ++head) {
      const std::size_t first = head * head_dim;
      Tensor<T> qh = slice_cols(q, first, head_dim);
      Tensor<T> kh = slice_cols(k, first, head_dim);
      Tensor<T> vh = slice_cols(v, first, head_dim);
      Tensor<T> attn =
          softmax_rows(scale(matmul(qh, transpose(kh)), att_scale));
      if (drop) attn = dropout(attn, dropout_ctx->rate, *dropout_ctx->rng);
      Tensor<T> ctx = matmul(attn, vh);
      context = head == 0 ? ctx : concat_last_axis(context, ctx);
    }
    Tensor<T> attn_out =
        add(matmul(context, layer.wo), repeat_rows(layer.bo, n));
    x = add(x, attn_out);

    Tensor<T> h2 = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias);
    Tensor<T> ff =
        vtanh(add(matmul(h2, layer.ff_w1), repeat_rows(layer.ff_b1, n)));
    ff = add(matmul(ff, layer.ff_w2), repeat_rows(layer.ff_b2, n));
    if (drop) ff = dropout(ff, dropout_ctx->rate, *dropout_ctx->rng);
    x = add(x, ff);
  }

  return layer_norm_rows(x, final_gain_, final_bias_);
}

template <typename T>
SegmentEmbeddings<T> EncoderModel<T>::encode(
    std::span<const std::uint32_t> ids, const DropoutCtx* dropout_ctx) const {
  return SegmentEmbeddings<T>::from_tokens(encode_tokens(ids, dropout_ctx));
}

// ---- QEEMB embedding files ----

namespace {
constexpr char kQeembMagic[] = {'Q', 'E', 'E', 'M', 'B', '1', '\n'};
}

template <typename T>
void save_precomputed(const std::filesystem::path& path,
                      const std::vector<SegmentEmbeddings<T>>& segments) {
  if (segments.empty()) {
    throw ValueError("save_precomputed: no segments to write");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kQeembMagic, sizeof kQeembMagic);
  const std::size_t dim = segments.front().tokens.dim(1);
  artifact::write_u32_le(out, static_cast<std::uint32_t>(dim));
  artifact::write_u32_le(out, static_cast<std::uint32_t>(segments.size()));
  for (const auto& segment : segments) {
    if (segment.tokens.dim(1) != dim) {
      throw ValueError("save_precomputed: segment dimension " +
                       std::to_string(segment.tokens.dim(1)) +
                       " differs from file dimension " + std::to_string(dim));
    }
    artifact::write_u32_le(out,
                           static_cast<std::uint32_t>(segment.tokens.dim(0)));
    for (const T v : segment.tokens.values()) {
      artifact::write_f32_le(out, static_cast<float>(v));
    }
  }
}

template <typename T>
std::vector<SegmentEmbeddings<T>> load_precomputed(
    const std::filesystem::path& path, std::size_t expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::size_t offset = 0;
  char magic[sizeof kQeembMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic ||
      !std::equal(std::begin(magic), std::end(magic), kQeembMagic)) {
    throw FormatError(path.string() + ": bad magic at byte 0");
  }
  offset += sizeof magic;
  const std::uint32_t dim = artifact::read_u32_le(in, offset);
  const std::uint32_t segment_count = artifact::read_u32_le(in, offset);
  if (dim == 0) {
    throw FormatError(path.string() + ": zero dimension at byte 7");
  }
  if (expected_dim != 0 && dim != expected_dim) {
    throw FormatError(path.string() + ": dimension mismatch, file has " +
                      std::to_string(dim) + ", expected " +
                      std::to_string(expected_dim) + " (byte 7)");
  }
  std::vector<SegmentEmbeddings<T>> segments;
  segments.reserve(segment_count);
  for (std::uint32_t s = 0; s < segment_count; ++s) {
    const std::size_t header_at = offset;
    const std::uint32_t n = artifact::read_u32_le(in, offset);
    if (n == 0) {
      throw FormatError(path.string() + ": empty segment at byte " +
                        std::to_string(header_at));
    }
    std::vector<T> values(static_cast<std::size_t>(n) * dim);
    for (auto& v : values) {
      v = static_cast<T>(artifact::read_f32_le(in, offset));
    }
    segments.push_back(SegmentEmbeddings<T>::from_tokens(
        Tensor<T>(Shape{n, dim}, std::move(values))));
  }
  return segments;
}

// ---- model artifacts ----

std::vector<std::pair<std::string, std::string>> encoder_config_fields(
    const EncoderConfig& config) {
  return {
      {"vocab_size", std::to_string(config.vocab_size)},
      {"dim", std::to_string(config.dim)},
      {"layers", std::to_string(config.layers)},
      {"heads", std::to_string(config.heads)},
      {"max_seq_len", std::to_string(config.max_seq_len)},
      {"positional", positional_name(config.positional)},
  };
}

EncoderConfig encoder_config_from_metadata(const artifact::Metadata& meta) {
  EncoderConfig config;
  config.vocab_size = std::stoull(meta.field("vocab_size"));
  config.dim = std::stoull(meta.field("dim"));
  config.layers = std::stoull(meta.field("layers"));
  config.heads = std::stoull(meta.field("heads"));
  config.max_seq_len = std::stoull(meta.field("max_seq_len"));
  config.positional = positional_from_string(meta.field("positional"));
  return config;
}

namespace artifact {

// Shared by encoder and estimator artifacts: copy manifest-ordered buffers
// into the model's named parameters, insisting on exact shape agreement.
void assign_params(
    const std::vector<std::pair<std::string, Tensor<float>>>& named,
    const Metadata& meta,
    const std::vector<std::vector<float>>& buffers) {
  if (named.size() != meta.params.size()) {
    throw FormatError("model artifact: manifest has " +
                      std::to_string(meta.params.size()) +
                      " parameters, model expects " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, tensor] = named[i];
    const auto& entry = meta.params[i];
    if (entry.name != name) {
      throw FormatError("model artifact: manifest entry '" + entry.name +
                        "' where '" + name + "' was expected");
    }
    if (entry.shape != tensor.shape()) {
      throw FormatError("model artifact: '" + name + "' has shape " +
                        shape_str(entry.shape) + " on disk, expected " +
                        shape_str(tensor.shape()));
    }
    const_cast<Tensor<float>&>(tensor).values() = buffers[i];
  }
}

}  // namespace artifact

void save_model(const EncoderModel<float>& model,
                const std::filesystem::path& dir) {
  artifact::save(dir, "encoder", encoder_config_fields(model.config()),
                 model.named_params());
}

EncoderModel<float> load_model(const std::filesystem::path& dir) {
  const auto meta = artifact::read_metadata(dir);
  if (meta.kind != "encoder") {
    throw FormatError("model artifact: kind '" + meta.kind +
                      "', expected 'encoder'");
  }
  EncoderModel<float> model(encoder_config_from_metadata(meta));
  artifact::assign_params(model.named_params(), meta,
                          artifact::read_params(dir, meta));
  return model;
}

#define QARS_INSTANTIATE_ENCODER(T)                                          \
  template struct SegmentEmbeddings<T>;                                      \
  template class EncoderModel<T>;                                            \
  template void save_precomputed<T>(                                         \
      const std::filesystem::path&, const std::vector<SegmentEmbeddings<T>>&);\
  template std::vector<SegmentEmbeddings<T>> load_precomputed<T>(            \
      const std::filesystem::path&, std::size_t);

QARS_INSTANTIATE_ENCODER(float)
QARS_INSTANTIATE_ENCODER(double)
#undef QARS_INSTANTIATE_ENCODER

}  // namespace qars
