// common.hpp -- shared error types and worker-count plumbing.
#pragma once

#include <stdexcept>
#include <string>

namespace qars {

// Invalid shapes or dimension mismatches between tensors.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed files: datasets, embedding dumps, model artifacts.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-domain values (e.g. scores outside the Likert range).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite numbers where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent model/training configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process-wide worker count for data-parallel kernels and per-segment
// scoring. 1 means fully serial. Thread count never changes results:
// parallel kernels are bitwise-identical to the serial reference.
int thread_count();
void set_thread_count(int n);

// Resolves the QARS_THREADS environment variable; returns 1 if unset/bad.
int threads_from_env();

}  // namespace qars
