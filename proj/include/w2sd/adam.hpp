#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "w2sd/param_vector.hpp"

namespace w2sd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t size, AdamConfig config);

  /// One bias-corrected Adam update. Throws NonFiniteError if `grads`
  /// contains NaN/Inf or the update produces a non-finite parameter.
  void step(ParamVector& params, const ParamVector& grads, std::string_view loss_name,
            long iteration = -1);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::size_t steps() const { return steps_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

}  // namespace w2sd
