#include "w2sd/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError(what, "shape mismatch");
}

void check_batch(const Matrix& x, std::span<const double> t) {
  if (static_cast<std::size_t>(x.rows()) != t.size())
    throw ConfigError("t", "one timestep per batch row required");
}

}  // namespace

TimestepSchedule::TimestepSchedule(std::vector<double> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) throw ConfigError("schedule", "empty timestep list");
  if (steps_.front() != 1000.0) throw ConfigError("schedule", "first timestep must be 1000");
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (!(steps_[i] > 0.0 && steps_[i] <= 1000.0))
      throw ConfigError("schedule", "timesteps must lie in (0, 1000]");
    if (i > 0 && !(steps_[i] < steps_[i - 1]))
      throw ConfigError("schedule", "timesteps must be strictly decreasing");
  }
}

TimestepSchedule TimestepSchedule::four_step() {
  return TimestepSchedule({1000.0, 937.5, 833.3, 625.0});
}

TimestepSchedule TimestepSchedule::uniform(std::size_t n) {
  if (n == 0) throw ConfigError("schedule", "need at least one step");
  std::vector<double> steps(n);
  for (std::size_t i = 0; i < n; ++i)
    steps[i] = 1000.0 * static_cast<double>(n - i) / static_cast<double>(n);
  return TimestepSchedule(std::move(steps));
}

TimestepSampler TimestepSampler::uniform_discrete(TimestepSchedule schedule) {
  return TimestepSampler(Kind::UniformDiscrete, schedule.steps(), 0.0, 0.0);
}

TimestepSampler TimestepSampler::logit_normal(double mean, double std) {
  if (!(std > 0.0)) throw ConfigError("sampler.logit_std", "must be positive");
  return TimestepSampler(Kind::LogitNormal, {}, mean, std);
}

double TimestepSampler::sample(Rng& rng) const {
  if (kind_ == Kind::UniformDiscrete) return steps_[rng.index(steps_.size())];
  const double sigma = 1.0 / (1.0 + std::exp(-(mean_ + std_ * rng.normal())));
  // Keep t strictly positive so denoising never divides the noise level away.
  return 1000.0 * std::clamp(sigma, 1e-5, 1.0);
}

std::vector<double> TimestepSampler::sample_batch(std::size_t n, Rng& rng) const {
  std::vector<double> t(n);
  for (auto& ti : t) ti = sample(rng);
  return t;
}

Matrix add_noise(const Matrix& x0, const Matrix& eps, std::span<const double> t) {
  check_same_shape(x0, eps, "add_noise");
  check_batch(x0, t);
  Matrix out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const double ti = t[static_cast<std::size_t>(i)];
    if (!(ti >= 0.0 && ti <= 1000.0)) throw DomainError("timestep outside [0, 1000]");
    const double s = sigma_of(ti);
    out.row(i) = (1.0 - s) * x0.row(i) + s * eps.row(i);
  }
  return out;
}

Matrix velocity_target(const Matrix& x0, const Matrix& eps) {
  check_same_shape(x0, eps, "velocity_target");
  return eps - x0;
}

Matrix denoise_prediction(const Matrix& x_t, const Matrix& v, std::span<const double> t) {
  check_same_shape(x_t, v, "denoise_prediction");
  check_batch(x_t, t);
  Matrix out(x_t.rows(), x_t.cols());
  for (Eigen::Index i = 0; i < x_t.rows(); ++i)
    out.row(i) = x_t.row(i) - sigma_of(t[static_cast<std::size_t>(i)]) * v.row(i);
  return out;
}

LossAndGrad flow_matching_loss(const MlpNet& net, const ParamVector& params, const Matrix& x0,
                               const Matrix* cond, const TimestepSampler& sampler, Rng& rng) {
  const auto n = x0.rows();
  const auto t = sampler.sample_batch(static_cast<std::size_t>(n), rng);
  const Matrix eps = rng.normal_matrix(n, x0.cols());
  const Matrix x_t = add_noise(x0, eps, t);
  ForwardCache cache;
  const Matrix v = net.forward(params, x_t, t, cond, &cache);
  const Matrix diff = v - velocity_target(x0, eps);
  LossAndGrad out;
  out.loss = diff.squaredNorm() / static_cast<double>(n);
  out.grad = net.backward(params, cache, (2.0 / static_cast<double>(n)) * diff).params;
  return out;
}

VelocityFn bind_net(const MlpNet& net, const ParamVector& params) {
  return [net, params](const Matrix& x, std::span<const double> t, const Matrix* cond) {
    return net.forward(params, x, t, cond);
  };
}

Matrix euler_sample(const VelocityFn& velocity, const TimestepSchedule& schedule,
                    const Matrix& eps, const Matrix* cond) {
  Matrix x = eps;
  std::vector<double> t(static_cast<std::size_t>(eps.rows()));
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    std::fill(t.begin(), t.end(), schedule.t(i));
    const double next = i + 1 < schedule.size() ? schedule.sigma(i + 1) : 0.0;
    x -= (schedule.sigma(i) - next) * velocity(x, t, cond);
  }
  return x;
}

Matrix few_step_sample(const VelocityFn& generator, const TimestepSchedule& schedule,
                       const Matrix& initial_noise, Rng& rng, const Matrix* cond,
                       Renoise renoise) {
  Matrix x = initial_noise;
  Matrix x0;
  std::vector<double> t(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    std::fill(t.begin(), t.end(), schedule.t(i));
    x0 = x - schedule.sigma(i) * generator(x, t, cond);
    if (i + 1 == schedule.size()) break;
    const double s = schedule.sigma(i + 1);
    if (renoise == Renoise::Fresh) {
      x = (1.0 - s) * x0 + s * rng.normal_matrix(x.rows(), x.cols());
    } else {
      x = (1.0 - s) * x0 + s * initial_noise;
    }
  }
  return x0;
}

Matrix few_step_sample(const VelocityFn& generator, const TimestepSchedule& schedule,
                       std::size_t count, std::size_t dim, Rng& rng, const Matrix* cond) {
  const Matrix eps = rng.normal_matrix(static_cast<Eigen::Index>(count),
                                       static_cast<Eigen::Index>(dim));
  return few_step_sample(generator, schedule, eps, rng, cond);
}

}  // namespace w2sd
