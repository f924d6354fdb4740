#pragma once

#include <cstdint>

namespace trajtok {

// Counter-based generator built on the splitmix64 finalizer. There is no
// sequential state: draw i of a stream is mix(key + (i+1)*golden), so draws
// are addressable, streams split without coordination, and the same
// (seed, stream path, index) always yields the same bits on every platform.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  explicit constexpr CounterRng(std::uint64_t seed) : key_(mix(seed + kGolden)) {}

  // child stream keyed by id; chain calls to build a stream path
  constexpr CounterRng stream(std::uint64_t id) const {
    CounterRng r = *this;
    r.key_ = mix(key_ ^ (id + kGolden));
    return r;
  }

  constexpr std::uint64_t bits(std::uint64_t i) const { return mix(key_ + (i + 1) * kGolden); }

  // uniform in [0, 1) with 53 random bits
  double unit(std::uint64_t i) const { return static_cast<double>(bits(i) >> 11) * 0x1.0p-53; }

  double uniform(std::uint64_t i, double lo, double hi) const { return lo + (hi - lo) * unit(i); }

  // uniform integer in [0, n) via 128-bit multiply-shift (no rejection loop)
  std::uint64_t below(std::uint64_t i, std::uint64_t n) const {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(i)) * n) >> 64);
  }

  constexpr std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

// Stateful convenience wrapper when draws are naturally sequential.
class RngSequence {
 public:
  explicit RngSequence(CounterRng rng) : rng_(rng) {}
  std::uint64_t bits() { return rng_.bits(next_++); }
  double unit() { return rng_.unit(next_++); }
  double uniform(double lo, double hi) { return rng_.uniform(next_++, lo, hi); }
  std::uint64_t below(std::uint64_t n) { return rng_.below(next_++, n); }

 private:
  CounterRng rng_;
  std::uint64_t next_ = 0;
};

// Fixed stream ids, one per independent consumer of randomness.
namespace rngstream {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kBatch = 4;
inline constexpr std::uint64_t kSubtokens = 5;
inline constexpr std::uint64_t kFourierNoise = 6;
}  // namespace rngstream

}  // namespace trajtok
