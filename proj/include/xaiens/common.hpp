// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xaiens {

enum class ErrorCode {
  invalid_argument,
  io,
  not_found,
  stale_cache,
  config,
  runtime,
};

const char* error_code_name(ErrorCode code);

/// All recoverable failures in the library surface as this exception.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

// FNV-1a 64-bit. Used for config/model digests threaded through artifacts;
// provenance hash, not a cryptographic one.
uint64_t fnv1a64_bytes(const void* bytes, size_t len,
                       uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(uint64_t v);

/// Mixes a base seed with string tags into a stream-specific seed.
uint64_t derive_seed(uint64_t base, std::initializer_list<std::string_view> tags);

// Deterministic RNG with hand-rolled float/normal/shuffle transforms so the
// produced streams do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  float uniformf(float lo, float hi);
  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  Rng fork(std::string_view tag);

 private:
  uint64_t state_[4];
};

/// Global worker-thread count for tensor ops (0 = hardware default).
void set_num_threads(int n);
int num_threads();

std::string format_double(double v);

}  // namespace xaiens
