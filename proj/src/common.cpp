// SPDX-License-Identifier: Apache-2.0
#include "xaiens/common.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstring>

namespace xaiens {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::stale_cache: return "stale_cache";
    case ErrorCode::config: return "config";
    case ErrorCode::runtime: return "runtime";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

uint64_t fnv1a64_bytes(const void* bytes, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64(std::string_view s, uint64_t seed) {
  return fnv1a64_bytes(s.data(), s.size(), seed);
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t derive_seed(uint64_t base, std::initializer_list<std::string_view> tags) {
  uint64_t h = fnv1a64_bytes(&base, sizeof(base));
  for (const auto& t : tags) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("/"), h);
  }
  return h;
}

namespace {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

// xoshiro256** seeded via splitmix64.
Rng::Rng(uint64_t seed) {
  uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

float Rng::uniformf(float lo, float hi) {
  return static_cast<float>(uniform(lo, hi));
}

uint64_t Rng::uniform_int(uint64_t n) {
  // Modulo bias is irrelevant at the scales used here.
  return next_u64() % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::fork(std::string_view tag) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64_bytes(&state_[0], sizeof(state_), h);
  return Rng(h ^ next_u64());
}

namespace {
int g_threads = 0;
}

void set_num_threads(int n) {
  g_threads = n;
  omp_set_dynamic(0);
  if (n > 0) {
    omp_set_num_threads(n);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
}

int num_threads() {
  if (g_threads > 0) return g_threads;
  return omp_get_max_threads();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

}  // namespace xaiens
