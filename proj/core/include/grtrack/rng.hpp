#pragma once

#include <cstdint>

namespace grtrack {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so a Gumbel sample for a given (step, token)
/// coordinate is reproducible regardless of draw order or platform.
///
/// The mixing function is SplitMix64's finaliser applied to a keyed
/// counter; the sequential interface just walks the counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Raw 64 random bits at an explicit counter position.
  std::uint64_t bits_at(std::uint64_t counter) const;
  /// Uniform in the open interval (0, 1) at an explicit counter position.
  double uniform_at(std::uint64_t counter) const;
  /// Standard Gumbel(0, 1) sample at an explicit counter position.
  double gumbel_at(std::uint64_t counter) const;

  std::uint64_t next_bits() { return bits_at(counter_++); }
  double uniform() { return uniform_at(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller normal; consumes two counters.
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent generator for a sub-task (sequence id, training step, ...).
  Rng fork(std::uint64_t sub_stream) const;

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace grtrack
