#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace inrank {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based 64-bit generator.
///
/// Draw n of a stream is a pure function of (key, n), so identical seeds give
/// identical sequences on every platform. `split` derives independent
/// substreams, which lets each layer/purpose own its draws: growing one layer
/// never shifts the random numbers seen by another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : key_(detail::mix64(seed ^ detail::mix64(stream + 0x9E3779B97F4A7C15ULL))) {}

  std::uint64_t next_u64() noexcept {
    return detail::mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Marsaglia polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double a, b, r2;
    do {
      a = 2.0 * uniform() - 1.0;
      b = 2.0 * uniform() - 1.0;
      r2 = a * a + b * b;
    } while (r2 >= 1.0 || r2 == 0.0);
    const double f = std::sqrt(-2.0 * std::log(r2) / r2);
    spare_ = b * f;
    has_spare_ = true;
    return a * f;
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  Rng split(std::uint64_t id) const noexcept { return Rng(key_, detail::mix64(id) ^ 0xA5A5A5A5ULL); }
  Rng split(std::string_view purpose) const noexcept { return split(detail::fnv1a(purpose)); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace inrank
