#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "w2sd/mlp.hpp"
#include "w2sd/param_vector.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class Rng;

/// Which backbone linears carry low-rank factors.
enum class LoraMode {
  Output,  // final linear only: the branch adds exactly scale * zeta(x, t) to the velocity
  Deep,    // every linear
};

/// Branch scale factors for the two velocity views sharing one branch.
struct ViewScales {
  double alpha_weak = 0.25;
  double alpha_strong = 1.0;

  /// Throws ConfigError unless 0 <= alpha_weak <= alpha_strong and alpha_strong != 0.
  void validate() const;
  bool operator==(const ViewScales&) const = default;
};

/// Low-rank additive branch over a frozen MlpNet.
///
/// Layer i carries A_i (out x r_i) and B_i (r_i x in) stored as
/// "lora/fc<i>.A" / "lora/fc<i>.B"; its effective weight is W_i + scale * A_i B_i.
/// r_i = min(rank, out_i, in_i), so a narrow output layer gets a smaller rank.
class LoraBranch {
 public:
  LoraBranch(const MlpNet& net, std::size_t rank, LoraMode mode);

  /// A = 0, B ~ N(0, b_std^2): the branch starts as an exact no-op.
  void init(Rng& rng, double b_std = 0.02);

  std::size_t rank() const { return rank_; }
  LoraMode mode() const { return mode_; }
  bool targets(std::size_t layer) const;
  std::size_t layer_rank(std::size_t layer) const;
  std::size_t a_index(std::size_t layer) const;
  std::size_t b_index(std::size_t layer) const;

  ParamVector& factors() { return factors_; }
  const ParamVector& factors() const { return factors_; }

 private:
  struct Slot {
    std::size_t a = 0;
    std::size_t b = 0;
    std::size_t rank = 0;
  };

  std::size_t rank_;
  LoraMode mode_;
  std::vector<std::optional<Slot>> slots_;
  ParamVector factors_;
};

/// Velocity of the backbone with the branch applied at `scale`
/// (scale 0 is the plain backbone forward, bit for bit).
Matrix eval_view(const MlpNet& net, double scale, const ParamVector& backbone,
                 const LoraBranch& branch, const Matrix& x, std::span<const double> t,
                 const Matrix* cond, ForwardCache* cache = nullptr);

/// Gradient over the branch factors only; the backbone receives nothing.
ParamVector branch_gradient(const MlpNet& net, const ParamVector& backbone,
                            const ForwardCache& cache, const Matrix& upstream);

/// Unconstrained minimizer of || residual - alpha_strong * zeta ||^2, i.e.
/// residual / alpha_strong. Throws DomainError for alpha_strong == 0.
Matrix optimal_branch_oracle(const Matrix& residual, double alpha_strong);

}  // namespace w2sd
