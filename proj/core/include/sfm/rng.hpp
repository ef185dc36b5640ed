#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sfm {

// Counter-based random source. Every draw is a pure function of
// (seed, stream, counter), so independent consumers can address the same
// random numbers without sharing mutable state or agreeing on draw order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const noexcept {
    std::uint64_t h = mix(seed_ ^ 0x9e3779b97f4a7c15ULL);
    h = mix(h ^ (stream * 0xbf58476d1ce4e5b9ULL));
    return mix(h ^ (counter * 0x94d049bb133111ebULL + 0x2545f4914f6cdd1dULL));
  }

  // Uniform in (0, 1), never exactly 0 or 1.
  double uniform(std::uint64_t stream, std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(stream, counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on two adjacent counters.
  double normal(std::uint64_t stream, std::uint64_t counter) const noexcept {
    const double u1 = uniform(stream, 2 * counter);
    const double u2 = uniform(stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Stream id built from up to three small keys (frame, purpose, call, ...).
  static constexpr std::uint64_t key(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
    return (a << 24) ^ (b << 8) ^ c ^ (a >> 40);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
};

// Sequential generator on top of CounterRng for code that just wants the
// next number. Copying it forks the sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : base_(seed), stream_(stream) {}

  double uniform() noexcept { return base_.uniform(stream_, counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return base_.normal(stream_, counter_++); }
  std::uint64_t next_u64() noexcept { return base_.bits(stream_, counter_++); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

  // Independent child generator; the parent advances by one draw.
  Rng split() noexcept { return Rng(base_.seed() ^ next_u64(), stream_ + 1); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  CounterRng base_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace sfm
