#include "pseudolab/rng.hpp"

#include <cmath>
#include <numbers>

namespace pseudolab {

namespace {
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64(seed_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream * kGamma + 0x632be59bd9b4e019ULL)));
}

}  // namespace pseudolab
