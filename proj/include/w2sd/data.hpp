#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "w2sd/scheduler.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class Rng;
class Checkpoint;

enum class DatasetKind {
  GaussianMixture8,  // 8 components on the unit circle, std 0.05, D = 2
  Checkerboard,      // 8 filled cells of a 4x4 board on [-2, 2]^2, D = 2
  MovingDot,         // T frames of an H x W image with a unit-mass dot, D = T*H*W
};

enum class ConditionMode {
  Unconditional,
  FirstFrame,  // condition = frame 0 of the sample (MovingDot only)
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::GaussianMixture8;
  std::size_t size = 100000;
  std::uint64_t seed = 7;
  ConditionMode condition = ConditionMode::Unconditional;
  std::size_t frames = 4;
  std::size_t height = 8;
  std::size_t width = 8;

  bool operator==(const DatasetSpec&) const = default;
};

struct DataBatch {
  Matrix x;     // n x dim
  Matrix cond;  // n x cond_dim (0 columns when unconditional)

  const Matrix* cond_ptr() const { return cond.cols() > 0 ? &cond : nullptr; }
};

/// Synthetic dataset. Sample i is a pure function of (kind, seed, i).
class Dataset {
 public:
  explicit Dataset(DatasetSpec spec);

  const DatasetSpec& spec() const { return spec_; }
  std::size_t dim() const;
  std::size_t cond_dim() const;

  Vector sample(std::size_t index) const;
  Vector condition_of(const Vector& sample) const;
  DataBatch batch(const std::vector<std::size_t>& indices) const;
  /// Draws indices uniformly from [0, size) with `rng`.
  DataBatch sample_batch(std::size_t batch_size, Rng& rng) const;

  /// Discrete modes for coverage statistics.
  std::size_t mode_count() const;
  std::optional<std::size_t> mode_of(const Vector& sample) const;
  /// Component centres of GaussianMixture8.
  static std::vector<Vector> mixture_centers();
  static constexpr double kMixtureStd = 0.05;

 private:
  DatasetSpec spec_;
};

/// Noise / sample pairs produced by a frozen few-step generator. Row i of
/// `noise` is the initial noise whose few-step sample is row i of `samples`.
struct SamplePairs {
  Matrix noise;
  Matrix samples;
  Matrix cond;

  std::size_t size() const { return static_cast<std::size_t>(noise.rows()); }
};

SamplePairs synthesize_pairs(const VelocityFn& generator, const TimestepSchedule& schedule,
                             std::size_t count, std::size_t dim, Rng& rng,
                             const Matrix* cond = nullptr, Renoise renoise = Renoise::Fresh);

/// Dump / load of materialized samples under the "data/" prefix.
void dump_samples(Checkpoint& ckpt, const DataBatch& batch);
DataBatch load_samples(const Checkpoint& ckpt);

}  // namespace w2sd
