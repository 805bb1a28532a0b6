// artifact.hpp -- model directory serialization shared by the encoder and
// estimator: a metadata text file (config keys plus an ordered parameter
// manifest of name, shape, byte offset) and params.bin holding float32
// little-endian values in manifest order, FNV-1a checksummed.
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "qars/tensor.hpp"

namespace qars::artifact {

inline constexpr int kFormatVersion = 1;

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // byte offset into params.bin
};

struct Metadata {
  int version = 0;
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;  // ordered
  std::vector<ParamEntry> params;
  std::uint64_t checksum = 0;

  const std::string& field(const std::string& key) const;
  bool has_field(const std::string& key) const;
};

void write_u32_le(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& in, std::size_t& offset);
void write_f32_le(std::ostream& out, float v);
float read_f32_le(std::istream& in, std::size_t& offset);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size);

void save(const std::filesystem::path& dir, const std::string& kind,
          const std::vector<std::pair<std::string, std::string>>& fields,
          const std::vector<std::pair<std::string, Tensor<float>>>& params);

Metadata read_metadata(const std::filesystem::path& dir);

// Loads params.bin, verifying the checksum and that the manifest offsets and
// shapes tile the file exactly. Results are in manifest order.
std::vector<std::vector<float>> read_params(const std::filesystem::path& dir,
                                            const Metadata& meta);

// Copies manifest-ordered buffers into a model's named parameters, insisting
// on exact name and shape agreement.
void assign_params(
    const std::vector<std::pair<std::string, Tensor<float>>>& named,
    const Metadata& meta, const std::vector<std::vector<float>>& buffers);

}  // namespace qars::artifact
