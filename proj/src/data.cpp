#include "w2sd/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "w2sd/checkpoint.hpp"
#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

Dataset::Dataset(DatasetSpec spec) : spec_(spec) {
  if (spec_.size == 0) throw ConfigError("dataset.size", "must be positive");
  if (spec_.kind == DatasetKind::MovingDot) {
    if (spec_.frames == 0 || spec_.height < 2 || spec_.width < 2)
      throw ConfigError("dataset", "moving_dot needs frames >= 1 and a grid of at least 2x2");
  } else if (spec_.condition != ConditionMode::Unconditional) {
    throw ConfigError("dataset.condition", "first_frame conditioning requires moving_dot");
  }
}

std::size_t Dataset::dim() const {
  if (spec_.kind == DatasetKind::MovingDot) return spec_.frames * spec_.height * spec_.width;
  return 2;
}

std::size_t Dataset::cond_dim() const {
  return spec_.condition == ConditionMode::FirstFrame ? spec_.height * spec_.width : 0;
}

std::vector<Vector> Dataset::mixture_centers() {
  std::vector<Vector> centers;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    centers.push_back((Vector(2) << std::cos(a), std::sin(a)).finished());
  }
  return centers;
}

Vector Dataset::sample(std::size_t index) const {
  Rng rng(mix_seed(spec_.seed, index));
  switch (spec_.kind) {
    case DatasetKind::GaussianMixture8: {
      const auto centers = mixture_centers();
      const Vector& c = centers[rng.index(8)];
      Vector x(2);
      for (int d = 0; d < 2; ++d) x(d) = std::clamp(c(d) + kMixtureStd * rng.normal(), -4.0, 4.0);
      return x;
    }
    case DatasetKind::Checkerboard: {
      // Filled cells are those with (row + col) even on a 4x4 board of unit cells.
      const std::size_t cell = rng.index(8);
      const std::size_t row = cell / 2;
      const std::size_t col = 2 * (cell % 2) + (row % 2);
      Vector x(2);
      x(0) = -2.0 + static_cast<double>(col) + rng.uniform();
      x(1) = -2.0 + static_cast<double>(row) + rng.uniform();
      return x;
    }
    case DatasetKind::MovingDot: {
      const auto h = static_cast<long>(spec_.height);
      const auto w = static_cast<long>(spec_.width);
      const auto span = static_cast<long>(spec_.frames) - 1;
      long vr = 0, vc = 0, r0 = 0, c0 = 0;
      // Pick a velocity in {-1, 0, 1}^2 and a start that keeps the dot on the grid.
      for (;;) {
        vr = static_cast<long>(rng.index(3)) - 1;
        vc = static_cast<long>(rng.index(3)) - 1;
        const long rlo = vr < 0 ? -vr * span : 0, rhi = vr > 0 ? h - 1 - vr * span : h - 1;
        const long clo = vc < 0 ? -vc * span : 0, chi = vc > 0 ? w - 1 - vc * span : w - 1;
        if (rlo > rhi || clo > chi) continue;
        r0 = rlo + static_cast<long>(rng.index(static_cast<std::size_t>(rhi - rlo + 1)));
        c0 = clo + static_cast<long>(rng.index(static_cast<std::size_t>(chi - clo + 1)));
        break;
      }
      Vector x = Vector::Zero(static_cast<Eigen::Index>(dim()));
      for (long f = 0; f <= span; ++f) {
        const long r = r0 + vr * f;
        const long c = c0 + vc * f;
        x(f * h * w + r * w + c) = 1.0;
      }
      return x;
    }
  }
  throw ConfigError("dataset.kind", "unknown dataset kind");
}

Vector Dataset::condition_of(const Vector& sample) const {
  if (spec_.condition == ConditionMode::Unconditional) return Vector(0);
  return sample.head(static_cast<Eigen::Index>(spec_.height * spec_.width));
}

DataBatch Dataset::batch(const std::vector<std::size_t>& indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  DataBatch out{Matrix(n, static_cast<Eigen::Index>(dim())),
                Matrix(n, static_cast<Eigen::Index>(cond_dim()))};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector s = sample(indices[static_cast<std::size_t>(i)]);
    out.x.row(i) = s.transpose();
    if (out.cond.cols() > 0) out.cond.row(i) = condition_of(s).transpose();
  }
  return out;
}

DataBatch Dataset::sample_batch(std::size_t batch_size, Rng& rng) const {
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.index(spec_.size);
  return batch(idx);
}

std::size_t Dataset::mode_count() const {
  switch (spec_.kind) {
    case DatasetKind::GaussianMixture8:
    case DatasetKind::Checkerboard:
      return 8;
    case DatasetKind::MovingDot:
      return 9;  // one mode per velocity
  }
  return 0;
}

std::optional<std::size_t> Dataset::mode_of(const Vector& x) const {
  switch (spec_.kind) {
    case DatasetKind::GaussianMixture8: {
      const auto centers = mixture_centers();
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (x - centers[k]).norm();
        if (d < best_d) best_d = d, best = k;
      }
      if (best_d <= 3.0 * kMixtureStd) return best;
      return std::nullopt;
    }
    case DatasetKind::Checkerboard: {
      const double cx = std::floor(x(0) + 2.0), cy = std::floor(x(1) + 2.0);
      if (cx < 0 || cx > 3 || cy < 0 || cy > 3) return std::nullopt;
      const auto col = static_cast<std::size_t>(cx), row = static_cast<std::size_t>(cy);
      if ((row + col) % 2 != 0) return std::nullopt;
      return row * 2 + col / 2;
    }
    case DatasetKind::MovingDot: {
      // Velocity between the brightest pixel of the first and second frame.
      const auto hw = static_cast<Eigen::Index>(spec_.height * spec_.width);
      if (spec_.frames < 2) return 0;
      Eigen::Index a = 0, b = 0;
      x.segment(0, hw).maxCoeff(&a);
      x.segment(hw, hw).maxCoeff(&b);
      const auto w = static_cast<long>(spec_.width);
      const long dr = b / w - a / w, dc = b % w - a % w;
      if (std::abs(dr) > 1 || std::abs(dc) > 1) return std::nullopt;
      return static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
    }
  }
  return std::nullopt;
}

SamplePairs synthesize_pairs(const VelocityFn& generator, const TimestepSchedule& schedule,
                             std::size_t count, std::size_t dim, Rng& rng, const Matrix* cond,
                             Renoise renoise) {
  if (cond != nullptr && static_cast<std::size_t>(cond->rows()) != count)
    throw ConfigError("cond", "one condition row per pair required");
  SamplePairs pairs;
  pairs.noise = rng.normal_matrix(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  pairs.samples = few_step_sample(generator, schedule, pairs.noise, rng, cond, renoise);
  if (cond != nullptr) pairs.cond = *cond;
  return pairs;
}

void dump_samples(Checkpoint& ckpt, const DataBatch& batch) {
  const auto to_tensor = [](std::string name, const Matrix& m) {
    return NamedTensor{std::move(name),
                       {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                       std::vector<double>(m.data(), m.data() + m.size())};
  };
  ckpt.add(to_tensor("data/x", batch.x));
  ckpt.add(to_tensor("data/cond", batch.cond));
}

DataBatch load_samples(const Checkpoint& ckpt) {
  const auto from_tensor = [](const NamedTensor& t) {
    if (t.shape.size() != 2) throw ConfigError(t.name, "expected a 2-D tensor");
    Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    std::copy(t.data.begin(), t.data.end(), m.data());
    return m;
  };
  return {from_tensor(ckpt.get("data/x")), from_tensor(ckpt.get("data/cond"))};
}

}  // namespace w2sd
