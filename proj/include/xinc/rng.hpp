#pragma once

#include <cstddef>
#include <cstdint>

namespace xinc {

/// xoshiro256** seeded through splitmix64.
///
/// The integer stream depends only on the seed, so draws are identical on every
/// platform. uniform() uses the top 53 bits; normal() is Box-Muller on top of
/// uniform() and therefore inherits the platform libm for log/cos/sin.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

  /// Independent stream keyed by (seed, stream).
  SeededRng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace xinc
