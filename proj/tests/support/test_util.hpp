// Shared helpers for the test suites.
#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "qars/tensor.hpp"

namespace qars::testing {

template <typename T>
Tensor<T> vec(std::vector<T> values, bool requires_grad = false) {
  const std::size_t n = values.size();
  return Tensor<T>({n}, std::move(values), requires_grad);
}

template <typename T>
Tensor<T> mat(std::size_t rows, std::size_t cols, std::vector<T> values,
              bool requires_grad = false) {
  return Tensor<T>({rows, cols}, std::move(values), requires_grad);
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                        double stddev = 1.0) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("qars_" + tag + "_" + std::to_string(rd()) + "_" +
             std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

}  // namespace qars::testing
