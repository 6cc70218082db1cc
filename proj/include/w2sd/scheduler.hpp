#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "w2sd/mlp.hpp"
#include "w2sd/param_vector.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class Rng;

/// Timesteps are carried in [0, 1000]; the interpolation weight is t / 1000.
inline double sigma_of(double t) { return t / 1000.0; }

/// Strictly decreasing denoising timesteps starting at pure noise (t = 1000).
class TimestepSchedule {
 public:
  explicit TimestepSchedule(std::vector<double> steps);

  /// The 4-step distillation list {1000, 937.5, 833.3, 625}.
  static TimestepSchedule four_step();
  /// n evenly spaced steps 1000, 1000 (n-1)/n, ..., 1000/n.
  static TimestepSchedule uniform(std::size_t n);

  const std::vector<double>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  double t(std::size_t i) const { return steps_.at(i); }
  double sigma(std::size_t i) const { return sigma_of(steps_.at(i)); }

  bool operator==(const TimestepSchedule&) const = default;

 private:
  std::vector<double> steps_;
};

/// Training-time timestep distribution. Logit-normal sampling draws
/// sigma = sigmoid(N(mean, std)) and plays the role of the flow-matching
/// loss weight.
class TimestepSampler {
 public:
  static TimestepSampler uniform_discrete(TimestepSchedule schedule);
  static TimestepSampler logit_normal(double mean = 0.0, double std = 1.0);

  double sample(Rng& rng) const;
  std::vector<double> sample_batch(std::size_t n, Rng& rng) const;

 private:
  enum class Kind { UniformDiscrete, LogitNormal };
  TimestepSampler(Kind kind, std::vector<double> steps, double mean, double std)
      : kind_(kind), steps_(std::move(steps)), mean_(mean), std_(std) {}

  Kind kind_;
  std::vector<double> steps_;
  double mean_;
  double std_;
};

/// x_t = (1 - sigma_t) x0 + sigma_t eps, row by row.
Matrix add_noise(const Matrix& x0, const Matrix& eps, std::span<const double> t);
/// eps - x0.
Matrix velocity_target(const Matrix& x0, const Matrix& eps);
/// x_t - sigma_t v.
Matrix denoise_prediction(const Matrix& x_t, const Matrix& v, std::span<const double> t);

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Conditional flow-matching regression: mean over the batch of
/// ||net(x_t, t) - (eps - x0)||^2 with fresh (t, eps) per row.
LossAndGrad flow_matching_loss(const MlpNet& net, const ParamVector& params, const Matrix& x0,
                               const Matrix* cond, const TimestepSampler& sampler, Rng& rng);

/// Any velocity model: (x, t, cond) -> v.
using VelocityFn =
    std::function<Matrix(const Matrix& x, std::span<const double> t, const Matrix* cond)>;

/// Copies `params`, so the closure outlives the caller's parameter set.
VelocityFn bind_net(const MlpNet& net, const ParamVector& params);

/// Deterministic Euler integration from t_1 = 1000 down to 0.
Matrix euler_sample(const VelocityFn& velocity, const TimestepSchedule& schedule,
                    const Matrix& eps, const Matrix* cond);

/// How the few-step sampler re-noises between steps.
enum class Renoise {
  Fresh,         // new Gaussian noise per step
  ReuseInitial,  // the initial noise again; makes the sample a function of it
};

/// Denoise / re-noise sampler used by distilled generators. Returns the
/// last step's x0 prediction; calls `generator` exactly schedule.size() times.
Matrix few_step_sample(const VelocityFn& generator, const TimestepSchedule& schedule,
                       const Matrix& initial_noise, Rng& rng, const Matrix* cond,
                       Renoise renoise = Renoise::Fresh);

Matrix few_step_sample(const VelocityFn& generator, const TimestepSchedule& schedule,
                       std::size_t count, std::size_t dim, Rng& rng, const Matrix* cond);

}  // namespace w2sd
