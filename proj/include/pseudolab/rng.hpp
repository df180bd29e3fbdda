#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pseudolab {

// Counter-based generator: output k of a stream is splitmix64(seed + k * gamma),
// so streams are identical on every platform and cheap to split.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via Box-Muller; no cached second variate.
  double normal();

  // Independent child stream keyed by `stream`; does not advance this one.
  Rng split(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace pseudolab
