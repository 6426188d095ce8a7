#pragma once

#include <cstdint>
#include <cmath>

namespace hir {

// Counter-based pseudo-random generator. Every draw is a pure function of
// (key, counter), and derived streams are obtained by folding tag words into
// the key, so results never depend on call interleaving or scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  // Derives an independent stream. fold(a).fold(b) != fold(b).fold(a).
  [[nodiscard]] Rng fold(std::uint64_t tag) const { return Rng(mix(key_, tag)); }

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller; the spare draw is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream tags used to derive the per-purpose generators of a run. Keeping
// them in one place guarantees distinct streams never alias.
enum StreamTag : std::uint64_t {
  kStreamInit = 1,
  kStreamSplit = 2,
  kStreamSampling = 3,
  kStreamTokens = 4,
  kStreamBatch = 5,
  kStreamSplitIndex = 6,
  kStreamTaskGen = 7,
  kStreamProbe = 8,
};

}  // namespace hir
