#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sepipe {

// Deterministic RNG wrapper. The mt19937_64 output sequence is pinned by the
// standard; the distribution helpers are hand-rolled because
// std::*_distribution is implementation-defined and would break byte-exact
// regeneration across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift; bias is < 2^-64 per draw.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  // Standard normal via Box-Muller. u1 is kept strictly positive.
  double normal() {
    double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // In-place Fisher-Yates. std::shuffle is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used to derive per-cell seeds from a root seed and a config key so
// determinism is independent of the parallel schedule.
inline std::uint64_t stable_hash64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view key) {
  std::uint64_t h = stable_hash64(key);
  return root ^ (h + 0x9E3779B97F4A7C15ULL + (root << 6) + (root >> 2));
}

}  // namespace sepipe
