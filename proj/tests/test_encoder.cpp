#include <doctest.h>

#include <cmath>
#include <set>

#include "qars/encoder.hpp"
#include "support/test_util.hpp"

using namespace qars;
using qars::testing::TempDir;
using qars::testing::mat;

namespace {

EncoderConfig tiny_config(std::size_t vocab = 16, std::size_t dim = 8,
                          std::size_t layers = 1, std::size_t heads = 2) {
  EncoderConfig config;
  config.vocab_size = vocab;
  config.dim = dim;
  config.layers = layers;
  config.heads = heads;
  config.max_seq_len = 16;
  return config;
}

template <typename T>
EncoderModel<T> tiny_model(std::uint64_t seed = 5,
                           EncoderConfig config = tiny_config()) {
  EncoderModel<T> model(config);
  Rng rng(seed, 1);
  model.init(rng);
  return model;
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig config = tiny_config();
  config.dim = 6;
  config.heads = 4;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.layers = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config(3);
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("encode shape contract and determinism") {
  const auto model = tiny_model<float>();
  const std::vector<std::uint32_t> ids{2, 5, 7, 3};
  const auto a = model.encode(ids);
  CHECK(a.tokens.shape() == Shape{4, 8});
  CHECK(a.pooled.shape() == Shape{8});
  const auto b = model.encode(ids);
  CHECK(a.tokens.values() == b.tokens.values());
  CHECK(a.pooled.values() == b.pooled.values());
}

TEST_CASE("encode rejects empty and overlong sequences") {
  const auto model = tiny_model<float>();
  CHECK_THROWS_AS(model.encode(std::vector<std::uint32_t>{}), ValueError);
  const std::vector<std::uint32_t> too_long(17, 1);
  CHECK_THROWS_WITH_AS(model.encode(too_long),
                       doctest::Contains("max_seq_len"), ValueError);
}

TEST_CASE("pooling is the arithmetic mean of token vectors") {
  // Stubbed layers: feed a plain matrix through the pooling contract.
  const auto segment = SegmentEmbeddings<double>::from_tokens(
      mat<double>(2, 2, {1, 3, 3, 5}));
  CHECK(segment.pooled.values() == std::vector<double>{2, 4});

  const auto single = SegmentEmbeddings<double>::from_tokens(
      mat<double>(1, 2, {7, 9}));
  CHECK(single.pooled.values() == std::vector<double>{7, 9});
}

TEST_CASE("pooled output of encode matches the mean of its token rows") {
  const auto model = tiny_model<float>(9);
  const std::vector<std::uint32_t> ids{1, 4, 9};
  const auto enc = model.encode(ids);
  for (std::size_t j = 0; j < 8; ++j) {
    float mean = 0.0f;
    for (std::size_t r = 0; r < 3; ++r) mean += enc.tokens.values()[r * 8 + j];
    mean /= 3.0f;
    CHECK(enc.pooled.values()[j] == doctest::Approx(mean).epsilon(1e-6));
  }
}

TEST_CASE("param_groups: L+1 groups, disjoint, union is every parameter") {
  const auto model = tiny_model<float>(5, tiny_config(16, 8, 2, 2));
  const auto groups = model.param_groups();
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].name == "embeddings");
  CHECK(groups[1].name == "layer1");
  CHECK(groups[2].name == "layer2");

  std::set<const void*> seen;
  std::size_t group_total = 0;
  for (const auto& group : groups) {
    for (const auto& p : group.params) {
      CHECK(seen.insert(p.node().get()).second);  // disjoint
      group_total += p.numel();
    }
  }
  std::size_t all_total = 0;
  for (const auto& p : model.all_params()) all_total += p.numel();
  CHECK(group_total == all_total);
  CHECK(seen.size() == model.all_params().size());
}

TEST_CASE("param group order is stable across calls and reloads") {
  TempDir tmp("groups");
  const auto model = tiny_model<float>(11, tiny_config(16, 8, 2, 2));
  const auto names = [](const EncoderModel<float>& m) {
    std::vector<std::string> out;
    for (const auto& [name, p] : m.named_params()) out.push_back(name);
    return out;
  };
  CHECK(names(model) == names(model));
  save_model(model, tmp.path());
  const auto loaded = load_model(tmp.path());
  CHECK(names(model) == names(loaded));
}

TEST_CASE("permutation sensitivity: positions matter") {
  for (const Positional positional :
       {Positional::sinusoidal, Positional::learned}) {
    EncoderConfig config = tiny_config();
    config.positional = positional;
    const auto model = tiny_model<float>(21, config);
    const auto ab = model.encode(std::vector<std::uint32_t>{4, 9});
    const auto ba = model.encode(std::vector<std::uint32_t>{9, 4});
    CHECK(ab.pooled.values() != ba.pooled.values());
  }
}

TEST_CASE("gradient check through a 1-layer pooled head") {
  // d=8, L=1 encoder; scalar head = sum of pooled output, checked in wide
  // precision. Tensors are shared handles, so passing a parameter itself as
  // grad_check's x makes the finite differences flow through the encoder.
  auto model = tiny_model<double>(33);
  const std::vector<std::uint32_t> ids{1, 5, 3};
  const auto f = [&model, &ids](const Tensor<double>&) {
    return sum(model.encode(ids).pooled);
  };
  double worst = 0.0;
  for (const auto& group : model.param_groups()) {
    for (const auto& p : group.params) {
      worst = std::max(worst, grad_check<double>(f, p, 1e-4));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("QEEMB round-trip") {
  TempDir tmp("qeemb");
  Rng rng(3);
  std::vector<SegmentEmbeddings<float>> segments;
  segments.push_back(SegmentEmbeddings<float>::from_tokens(
      qars::testing::random_tensor<float>({3, 4}, rng)));
  segments.push_back(SegmentEmbeddings<float>::from_tokens(
      qars::testing::random_tensor<float>({1, 4}, rng)));
  save_precomputed(tmp.file("e.qeemb"), segments);
  const auto loaded = load_precomputed<float>(tmp.file("e.qeemb"));
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].tokens.values() == segments[0].tokens.values());
  CHECK(loaded[1].tokens.values() == segments[1].tokens.values());
  // n=1 pools to its single token vector.
  CHECK(loaded[1].pooled.values() == segments[1].tokens.values());
}

TEST_CASE("QEEMB format errors carry byte offsets") {
  TempDir tmp("qeemb_bad");
  qars::testing::write_text(tmp.file("bad.qeemb"), "NOTEMB1\nxxxx");
  CHECK_THROWS_WITH_AS(load_precomputed<float>(tmp.file("bad.qeemb")),
                       doctest::Contains("bad magic at byte 0"), FormatError);

  Rng rng(3);
  std::vector<SegmentEmbeddings<float>> segments;
  segments.push_back(SegmentEmbeddings<float>::from_tokens(
      qars::testing::random_tensor<float>({2, 4}, rng)));
  save_precomputed(tmp.file("ok.qeemb"), segments);
  CHECK_THROWS_WITH_AS(load_precomputed<float>(tmp.file("ok.qeemb"), 8),
                       doctest::Contains("dimension mismatch"), FormatError);

  // Truncate mid-segment.
  const auto bytes = qars::testing::read_text(tmp.file("ok.qeemb"));
  qars::testing::write_text(tmp.file("trunc.qeemb"),
                            bytes.substr(0, bytes.size() - 6));
  CHECK_THROWS_WITH_AS(load_precomputed<float>(tmp.file("trunc.qeemb")),
                       doctest::Contains("truncated file at byte"),
                       FormatError);
}

TEST_CASE("model artifact round-trip is bitwise") {
  TempDir tmp("artifact");
  const auto model = tiny_model<float>(17, tiny_config(20, 8, 2, 2));
  save_model(model, tmp.path());
  const auto loaded = load_model(tmp.path());
  CHECK(loaded.config() == model.config());

  const auto original = model.named_params();
  const auto reloaded = loaded.named_params();
  REQUIRE(original.size() == reloaded.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    CHECK(original[i].second.values() == reloaded[i].second.values());
  }

  // Encoding after the round trip is bitwise identical too.
  const std::vector<std::uint32_t> ids{3, 1, 4, 1, 5};
  CHECK(model.encode(ids).tokens.values() ==
        loaded.encode(ids).tokens.values());
}

TEST_CASE("model artifact rejects tampering") {
  TempDir tmp("tamper");
  const auto model = tiny_model<float>(2);
  save_model(model, tmp.path());

  SUBCASE("declared dim mismatch") {
    auto meta = qars::testing::read_text(tmp.file("metadata.txt"));
    const auto at = meta.find("dim: 8");
    REQUIRE(at != std::string::npos);
    meta.replace(at, 6, "dim: 4");
    qars::testing::write_text(tmp.file("metadata.txt"), meta);
    CHECK_THROWS_AS(load_model(tmp.path()), FormatError);
  }
  SUBCASE("version mismatch") {
    auto meta = qars::testing::read_text(tmp.file("metadata.txt"));
    const auto at = meta.find("qars-model v1");
    REQUIRE(at != std::string::npos);
    meta.replace(at, 13, "qars-model v9");
    qars::testing::write_text(tmp.file("metadata.txt"), meta);
    CHECK_THROWS_WITH_AS(load_model(tmp.path()),
                         doctest::Contains("version mismatch"), FormatError);
  }
  SUBCASE("checksum failure") {
    auto bin = qars::testing::read_text(tmp.file("params.bin"));
    bin[10] = static_cast<char>(bin[10] ^ 0x40);
    qars::testing::write_text(tmp.file("params.bin"), bin);
    CHECK_THROWS_WITH_AS(load_model(tmp.path()),
                         doctest::Contains("checksum failure"), FormatError);
  }
}
