#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace bilat {

// Malformed or truncated artifact files (BLAT1 episodes, BLATM1 checkpoints, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid run configuration or violated config invariants.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument(std::string("non-finite value in ") + what);
  }
}

inline void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) require_finite(x, what);
}

inline double clamp_abs(double x, double limit) {
  if (x > limit) return limit;
  if (x < -limit) return -limit;
  return x;
}

// Deterministic RNG used everywhere randomness is needed. mt19937_64 has a
// standard-defined sequence; the distributions below are pinned to this
// toolchain, which is enough for the reproducibility contract (same binary,
// same seed, same bytes).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }
  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }
  int64_t index(int64_t n) {
    std::uniform_int_distribution<int64_t> d(0, n - 1);
    return d(engine_);
  }
  uint64_t raw() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// 64-bit mixing used for derived seeds and the hashed language encoder.
// splitmix64 finalizer; stable across platforms.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
  return mix64(seed ^ (v + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2)));
}

inline uint64_t hash_string(std::string_view s, uint64_t seed) {
  uint64_t h = mix64(seed ^ 0x9ae16a3b2f90404full);
  for (unsigned char c : s) {
    h = (h ^ c) * 0x100000001b3ull;
    h = mix64(h);
  }
  return h;
}

}  // namespace bilat
