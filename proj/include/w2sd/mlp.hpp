#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "w2sd/param_vector.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class LoraBranch;
class Rng;

enum class Activation { SiLU, Tanh };

/// Width of the sinusoidal timestep features appended to every input.
inline constexpr std::size_t kTimeEmbedDim = 8;

struct MlpConfig {
  std::size_t sample_dim = 2;
  std::size_t cond_dim = 0;
  std::vector<std::size_t> hidden{128, 128, 128};
  Activation activation = Activation::SiLU;

  bool operator==(const MlpConfig&) const = default;
};

/// Sinusoidal features of t/1000, n x kTimeEmbedDim.
Matrix time_embedding(std::span<const double> t);

/// Activations kept by a forward pass for the matching backward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;     // input to each evaluated linear layer
  std::vector<Matrix> pre;        // pre-activation of each evaluated hidden layer
  std::vector<Matrix> low_rank;   // B * input for layers carrying a branch
  const LoraBranch* branch = nullptr;
  double scale = 0.0;
  std::size_t depth = 0;          // number of linear layers evaluated

  bool filled() const { return depth > 0; }
  void clear() { *this = ForwardCache{}; }
};

struct BackwardOptions {
  bool param_grad = true;
  bool input_grad = false;
  bool branch_grad = false;
};

struct BackwardResult {
  ParamVector params;  // empty unless requested
  ParamVector branch;  // empty unless requested
  Matrix input;        // n x sample_dim, empty unless requested
};

/// Velocity network: concat(x, time features, cond) -> hidden stack -> R^D.
///
/// Parameters live in a ParamVector laid out as (weight, bias) per linear
/// layer. Tensors are addressed by position, so the same net can evaluate
/// parameter sets with different name prefixes (teacher/, gen/, ...).
class MlpNet {
 public:
  explicit MlpNet(MlpConfig config);

  const MlpConfig& config() const { return config_; }
  std::size_t sample_dim() const { return config_.sample_dim; }
  std::size_t cond_dim() const { return config_.cond_dim; }
  std::size_t input_dim() const;
  std::size_t num_linear() const { return config_.hidden.size() + 1; }
  std::size_t linear_in(std::size_t layer) const;
  std::size_t linear_out(std::size_t layer) const;

  /// Zero-valued parameters named "<prefix>fc<i>.weight" / ".bias".
  ParamVector make_params(const std::string& prefix = "") const;
  /// Kaiming-uniform weights, zero biases.
  ParamVector init_params(Rng& rng, const std::string& prefix = "") const;

  /// Velocity prediction, n x sample_dim. Passing a branch evaluates the
  /// effective weights W + scale * A * B on every layer the branch targets.
  Matrix forward(const ParamVector& params, const Matrix& x, std::span<const double> t,
                 const Matrix* cond, ForwardCache* cache = nullptr,
                 const LoraBranch* branch = nullptr, double scale = 0.0) const;

  /// Post-activation output of hidden layer `tap` (0-based).
  Matrix forward_features(const ParamVector& params, const Matrix& x, std::span<const double> t,
                          const Matrix* cond, std::size_t tap,
                          ForwardCache* cache = nullptr) const;

  /// Gradients for an upstream gradient on the last evaluated output of
  /// `cache` (the velocity, or the tapped hidden activation).
  BackwardResult backward(const ParamVector& params, const ForwardCache& cache,
                          const Matrix& upstream, const BackwardOptions& options = {}) const;

 private:
  void check_params(const ParamVector& params) const;
  Matrix assemble_input(const Matrix& x, std::span<const double> t, const Matrix* cond) const;
  Matrix run(const ParamVector& params, Matrix h, std::size_t depth, ForwardCache* cache,
             const LoraBranch* branch, double scale) const;

  MlpConfig config_;
};

}  // namespace w2sd
