#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "w2sd/types.hpp"

namespace w2sd {

/// Seeded random stream. All randomness in the library flows through this
/// type so that a run is a pure function of its seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double normal();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  /// Independent child stream; consumes one draw from this stream.
  Rng fork(std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; used to derive per-index seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace w2sd
