#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace gpvae {

/// Counter-based seeded random stream. Output i depends only on (seed, i),
/// so a stream at a given seed always replays the same sequence and split()
/// derives statistically independent child streams from (seed, key).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(mix(seed ^ kStir)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// Child stream keyed by `key`; does not advance this stream.
  RngStream split(std::uint64_t key) const {
    RngStream child;
    child.seed_ = mix(seed_ + kGamma * (key + 1));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return mix(seed_ + kGamma * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (one variate per two counter steps).
  double normal() {
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t next_below(std::uint64_t n) {
    // Lemire multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kStir = 0x8BADF00DDEADBEEFull;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

/// Substream purpose keys. Derivations are stateless: e.g. the reconstruction
/// noise for (epoch e, batch k) is rng.split(kKeyRecon).split(e).split(k),
/// so resumed runs replay identical noise without serializing RNG state.
namespace rngkey {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kRecon = 3;
inline constexpr std::uint64_t kSqLog = 4;
inline constexpr std::uint64_t kVal = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kEval = 7;
inline constexpr std::uint64_t kSvi = 8;
inline constexpr std::uint64_t kGapEval = 9;
}  // namespace rngkey

}  // namespace gpvae
