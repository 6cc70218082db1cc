#include "w2sd/adam.hpp"

#include <cmath>
#include <string>

#include "w2sd/errors.hpp"

namespace w2sd {

AdamState::AdamState(std::size_t size, AdamConfig config)
    : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamState::step(ParamVector& params, const ParamVector& grads, std::string_view loss_name,
                     long iteration) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ConfigError("adam", "parameter/gradient size does not match optimizer state");
  const auto g = grads.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      std::string where = "gradient coordinate " + std::to_string(i);
      for (const auto& d : grads.layout())
        if (i >= d.offset && i < d.offset + d.numel()) where += " (" + d.name + ")";
      throw NonFiniteError(iteration, std::string(loss_name),
                           where + ", grad norm " + std::to_string(grads.norm()));
    }
  }

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto p = params.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
    const double m_hat = m_[i] / bias1;
    const double v_hat = v_[i] / bias2;
    p[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
  if (!params.all_finite())
    throw NonFiniteError(iteration, std::string(loss_name), "parameters after Adam update");
}

}  // namespace w2sd
