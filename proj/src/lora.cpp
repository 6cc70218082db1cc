#include "w2sd/lora.hpp"

#include <algorithm>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

void ViewScales::validate() const {
  if (alpha_strong == 0.0) throw ConfigError("views.alpha_strong", "must be nonzero");
  if (alpha_strong < 0.0) throw ConfigError("views.alpha_strong", "must be positive");
  if (alpha_weak < 0.0 || alpha_weak > alpha_strong)
    throw ConfigError("views.alpha_weak", "must lie in [0, alpha_strong]");
}

LoraBranch::LoraBranch(const MlpNet& net, std::size_t rank, LoraMode mode)
    : rank_(rank), mode_(mode), slots_(net.num_linear()) {
  if (rank == 0) throw ConfigError("lora.rank", "must be positive");
  for (std::size_t i = 0; i < net.num_linear(); ++i) {
    const bool targeted = mode == LoraMode::Deep || i + 1 == net.num_linear();
    if (!targeted) continue;
    const std::size_t r = std::min({rank, net.linear_out(i), net.linear_in(i)});
    const std::string base = "lora/fc" + std::to_string(i);
    Slot slot;
    slot.rank = r;
    slot.a = factors_.add(base + ".A", {net.linear_out(i), r});
    slot.b = factors_.add(base + ".B", {r, net.linear_in(i)});
    slots_[i] = slot;
  }
}

void LoraBranch::init(Rng& rng, double b_std) {
  for (const auto& slot : slots_) {
    if (!slot) continue;
    factors_.matrix(slot->a).setZero();
    auto b = factors_.matrix(slot->b);
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = b_std * rng.normal();
  }
}

bool LoraBranch::targets(std::size_t layer) const {
  return layer < slots_.size() && slots_[layer].has_value();
}

std::size_t LoraBranch::layer_rank(std::size_t layer) const {
  return targets(layer) ? slots_[layer]->rank : 0;
}

std::size_t LoraBranch::a_index(std::size_t layer) const {
  if (!targets(layer)) throw UsageError("layer carries no low-rank factors");
  return slots_[layer]->a;
}

std::size_t LoraBranch::b_index(std::size_t layer) const {
  if (!targets(layer)) throw UsageError("layer carries no low-rank factors");
  return slots_[layer]->b;
}

Matrix eval_view(const MlpNet& net, double scale, const ParamVector& backbone,
                 const LoraBranch& branch, const Matrix& x, std::span<const double> t,
                 const Matrix* cond, ForwardCache* cache) {
  return net.forward(backbone, x, t, cond, cache, &branch, scale);
}

ParamVector branch_gradient(const MlpNet& net, const ParamVector& backbone,
                            const ForwardCache& cache, const Matrix& upstream) {
  if (cache.filled() && cache.branch == nullptr) {
    // Scale 0 view: the branch is inactive and its gradient is exactly zero.
    throw UsageError("branch gradient requested for a view evaluated at scale 0");
  }
  BackwardOptions opts;
  opts.param_grad = false;
  opts.branch_grad = true;
  return net.backward(backbone, cache, upstream, opts).branch;
}

Matrix optimal_branch_oracle(const Matrix& residual, double alpha_strong) {
  if (alpha_strong == 0.0) throw DomainError("alpha_strong must be nonzero");
  return residual / alpha_strong;
}

}  // namespace w2sd
