#include "grtrack/rng.hpp"

#include <cmath>
#include <numbers>

namespace grtrack {

namespace {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::bits_at(std::uint64_t counter) const {
  return mix64(mix64(mix64(seed_) ^ stream_) ^ counter);
}

double Rng::uniform_at(std::uint64_t counter) const {
  // 53 random mantissa bits, shifted off zero.
  const std::uint64_t b = bits_at(counter) >> 11;
  return (static_cast<double>(b) + 0.5) * 0x1.0p-53;
}

double Rng::gumbel_at(std::uint64_t counter) const { return -std::log(-std::log(uniform_at(counter))); }

double Rng::normal(double mean, double stddev) {
  const double u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection keeps the distribution exact.
  const std::uint64_t limit = ~0ULL - (~0ULL % n);
  std::uint64_t b;
  do {
    b = next_bits();
  } while (b >= limit);
  return b % n;
}

Rng Rng::fork(std::uint64_t sub_stream) const {
  return Rng(mix64(seed_ ^ mix64(sub_stream + 0x632BE59BD9B4E019ULL)), mix64(stream_ ^ sub_stream));
}

}  // namespace grtrack
