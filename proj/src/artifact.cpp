#include "qars/artifact.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qars/common.hpp"

namespace qars::artifact {

const std::string& Metadata::field(const std::string& key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return v;
  }
  throw FormatError("model metadata: missing field '" + key + "'");
}

bool Metadata::has_field(const std::string& key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return true;
  }
  return false;
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {
      static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
      static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t read_u32_le(std::istream& in, std::size_t& offset) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) {
    throw FormatError("truncated file at byte " + std::to_string(offset));
  }
  offset += 4;
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void write_f32_le(std::ostream& out, float v) {
  write_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

float read_f32_le(std::istream& in, std::size_t& offset) {
  return std::bit_cast<float>(read_u32_le(in, offset));
}

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

namespace {

std::string shape_to_manifest(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape shape_from_manifest(const std::string& s) {
  Shape shape;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t x = s.find('x', start);
    const std::string part =
        x == std::string::npos ? s.substr(start) : s.substr(start, x - start);
    shape.push_back(static_cast<std::size_t>(std::stoull(part)));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  return shape;
}

}  // namespace

void save(const std::filesystem::path& dir, const std::string& kind,
          const std::vector<std::pair<std::string, std::string>>& fields,
          const std::vector<std::pair<std::string, Tensor<float>>>& params) {
  std::filesystem::create_directories(dir);

  std::ostringstream bin;
  std::vector<ParamEntry> manifest;
  std::size_t offset = 0;
  for (const auto& [name, tensor] : params) {
    manifest.push_back({name, tensor.shape(), offset});
    for (const float v : tensor.values()) write_f32_le(bin, v);
    offset += tensor.numel() * 4;
  }
  const std::string bin_bytes = bin.str();
  const std::uint64_t checksum = fnv1a64(
      reinterpret_cast<const unsigned char*>(bin_bytes.data()),
      bin_bytes.size());

  {
    std::ofstream out(dir / "params.bin", std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir / "params.bin").string());
    out.write(bin_bytes.data(), static_cast<std::streamsize>(bin_bytes.size()));
  }
  {
    std::ofstream out(dir / "metadata.txt", std::ios::binary);
    if (!out) {
      throw FormatError("cannot write " + (dir / "metadata.txt").string());
    }
    out << "format: qars-model v" << kFormatVersion << '\n';
    out << "kind: " << kind << '\n';
    for (const auto& [k, v] : fields) out << k << ": " << v << '\n';
    char checksum_hex[17];
    std::snprintf(checksum_hex, sizeof checksum_hex, "%016llx",
                  static_cast<unsigned long long>(checksum));
    out << "params_checksum: " << checksum_hex << '\n';
    for (const auto& entry : manifest) {
      out << "param: " << entry.name << ' ' << shape_to_manifest(entry.shape)
          << ' ' << entry.offset << '\n';
    }
  }
}

Metadata read_metadata(const std::filesystem::path& dir) {
  std::ifstream in(dir / "metadata.txt", std::ios::binary);
  if (!in) throw FormatError("cannot read " + (dir / "metadata.txt").string());
  Metadata meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t colon = line.find(": ");
    if (colon == std::string::npos) {
      throw FormatError("metadata line " + std::to_string(line_no) +
                        ": expected 'key: value'");
    }
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "format") {
      if (value.rfind("qars-model v", 0) != 0) {
        throw FormatError("metadata: unknown format '" + value + "'");
      }
      meta.version = std::stoi(value.substr(std::string("qars-model v").size()));
      if (meta.version != kFormatVersion) {
        throw FormatError("metadata: version mismatch, file v" +
                          std::to_string(meta.version) + " vs supported v" +
                          std::to_string(kFormatVersion));
      }
    } else if (key == "kind") {
      meta.kind = value;
    } else if (key == "params_checksum") {
      meta.checksum = std::stoull(value, nullptr, 16);
    } else if (key == "param") {
      std::istringstream parts(value);
      ParamEntry entry;
      std::string shape_text;
      if (!(parts >> entry.name >> shape_text >> entry.offset)) {
        throw FormatError("metadata line " + std::to_string(line_no) +
                          ": bad param entry");
      }
      entry.shape = shape_from_manifest(shape_text);
      meta.params.push_back(std::move(entry));
    } else {
      meta.fields.emplace_back(key, value);
    }
  }
  if (meta.version == 0) throw FormatError("metadata: missing format line");
  return meta;
}

std::vector<std::vector<float>> read_params(const std::filesystem::path& dir,
                                            const Metadata& meta) {
  std::ifstream in(dir / "params.bin", std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot read " + (dir / "params.bin").string());
  const std::size_t file_size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::string bytes(file_size, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(file_size));
  if (static_cast<std::size_t>(in.gcount()) != file_size) {
    throw FormatError("params.bin: short read");
  }
  const std::uint64_t checksum = fnv1a64(
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  if (checksum != meta.checksum) {
    throw FormatError("params.bin: checksum failure");
  }

  std::vector<std::vector<float>> out;
  out.reserve(meta.params.size());
  std::size_t expected_offset = 0;
  for (const auto& entry : meta.params) {
    if (entry.offset != expected_offset) {
      throw FormatError("params manifest: '" + entry.name +
                        "' offset " + std::to_string(entry.offset) +
                        " does not follow previous entry (" +
                        std::to_string(expected_offset) + ")");
    }
    const std::size_t count = shape_numel(entry.shape);
    const std::size_t byte_count = count * 4;
    if (entry.offset + byte_count > file_size) {
      throw FormatError("params.bin: '" + entry.name +
                        "' runs past end of file at byte " +
                        std::to_string(entry.offset));
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t at = entry.offset + i * 4;
      const std::uint32_t u =
          static_cast<std::uint8_t>(bytes[at]) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[at + 1]))
           << 8) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[at + 2]))
           << 16) |
          (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[at + 3]))
           << 24);
      values[i] = std::bit_cast<float>(u);
    }
    out.push_back(std::move(values));
    expected_offset += byte_count;
  }
  if (expected_offset != file_size) {
    throw FormatError("params.bin: " + std::to_string(file_size) +
                      " bytes but manifest covers " +
                      std::to_string(expected_offset));
  }
  return out;
}

}  // namespace qars::artifact
