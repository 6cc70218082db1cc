#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "w2sd/adam.hpp"
#include "w2sd/data.hpp"
#include "w2sd/discriminator.hpp"
#include "w2sd/grad_check.hpp"
#include "w2sd/lora.hpp"
#include "w2sd/mlp.hpp"
#include "w2sd/scheduler.hpp"

namespace w2sd {

class Rng;

/// Generator-side loss weights.
struct LossWeights {
  double dmd = 1.0;
  double reg = 0.25;
  double gen = 0.05;
  double distill = 0.0;  // noise/sample pair regression (one-step curriculum only)
  bool reg_enabled = true;
  bool normalizer_enabled = false;

  /// Weight actually applied to the regularizer (0 when disabled).
  double reg_weight() const { return reg_enabled ? reg : 0.0; }
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Linear ramp of (w_distill, w_dmd) used when training the one-step generator.
struct CurriculumSchedule {
  double distill_start = 1.0;
  double distill_end = 0.25;
  double dmd_start = 0.25;
  double dmd_end = 1.0;
  std::size_t ramp = 1000;  // iterations from start to end values

  /// (w_distill, w_dmd) at `iteration`; end values from `ramp` onwards.
  std::pair<double, double> at(std::size_t iteration) const;
  bool operator==(const CurriculumSchedule&) const = default;
};

/// Where the generator's input comes from during distillation.
enum class GeneratorInputMode {
  NoisedGroundTruth,  // x_t from ground truth noised at a schedule timestep
  PureNoise,          // x_t = eps at t = 1000
};

/// How the generator output is re-noised before the real/fake views score it.
enum class DmdTimestepMode {
  GeneratorStep,  // same t and eps as the generator input
  Schedule,       // fresh t from the schedule, fresh noise
  LogitNormal,    // fresh logit-normal t, fresh noise
};

struct DistillConfig {
  TimestepSchedule schedule = TimestepSchedule::four_step();
  ViewScales scales;
  LoraMode lora_mode = LoraMode::Deep;
  std::size_t lora_rank = 4;
  double lora_init_std = 0.02;
  LossWeights weights;
  AdamConfig generator_opt{1e-4, 0.9, 0.999, 1e-8};
  AdamConfig critic_opt{4e-4, 0.9, 0.999, 1e-8};
  std::size_t batch_size = 64;
  std::size_t critic_updates = 5;  // branch/discriminator updates per generator update
  std::size_t disc_tap = 1;
  std::size_t disc_hidden = 64;
  bool disc_noised = true;
  GeneratorInputMode generator_input = GeneratorInputMode::NoisedGroundTruth;
  DmdTimestepMode dmd_timestep = DmdTimestepMode::LogitNormal;
  double logit_mean = 0.0;
  double logit_std = 1.0;
  double reg_eta_factor = 2.0;
  std::size_t reg_window = 100;
  Renoise pair_renoise = Renoise::ReuseInitial;

  void validate() const;
};

/// Frozen few-step generator that labels noise for the one-step curriculum.
struct PairTeacher {
  ParamVector params;
  TimestepSchedule schedule;
  Renoise renoise = Renoise::ReuseInitial;
};

/// Everything one distillation run mutates.
class DistillState {
 public:
  DistillState(MlpNet net, ParamVector teacher, DistillConfig config, Rng& init_rng);

  const MlpNet& net() const { return net_; }
  const DistillConfig& config() const { return config_; }
  LossWeights& weights() { return config_.weights; }
  const LossWeights& weights() const { return config_.weights; }

  const ParamVector& teacher() const { return teacher_; }
  ParamVector& generator() { return generator_; }
  const ParamVector& generator() const { return generator_; }
  LoraBranch& branch() { return branch_; }
  const LoraBranch& branch() const { return branch_; }
  const DiscriminatorHead& head() const { return head_; }
  ParamVector& disc() { return disc_; }
  const ParamVector& disc() const { return disc_; }

  AdamState& generator_opt() { return generator_opt_; }
  AdamState& branch_opt() { return branch_opt_; }
  AdamState& disc_opt() { return disc_opt_; }

  /// Replaces the generator (same layout), resetting its optimizer.
  void set_generator(const ParamVector& params);

  /// Throws if the frozen backbone changed since construction.
  void verify_teacher_frozen() const;

  long iteration = 0;
  std::size_t generator_updates = 0;
  std::size_t critic_updates = 0;
  std::optional<PairTeacher> pair_teacher;
  std::deque<double> diffusion_history;

 private:
  MlpNet net_;
  DistillConfig config_;
  ParamVector teacher_;
  std::uint64_t teacher_checksum_;
  ParamVector generator_;
  LoraBranch branch_;
  DiscriminatorHead head_;
  ParamVector disc_;
  AdamState generator_opt_;
  AdamState branch_opt_;
  AdamState disc_opt_;
};

/// What the generator sees: x_t at timestep t (plus the condition).
struct GeneratorInput {
  Matrix x_t;
  std::vector<double> t;
  Matrix cond;
  Matrix eps;

  const Matrix* cond_ptr() const { return cond.cols() > 0 ? &cond : nullptr; }
};

GeneratorInput pure_noise_input(const Matrix& eps, const Matrix& cond = Matrix());
/// x_t = add_noise(x_gt, eps, t) with t drawn from the state's schedule.
GeneratorInput noised_input(const DistillState& state, const DataBatch& gt, const Matrix& eps,
                            Rng& rng);
/// Dispatches on config().generator_input.
GeneratorInput make_generator_input(const DistillState& state, const DataBatch& gt,
                                    const Matrix& eps, Rng& rng);

struct GeneratorOutput {
  Matrix x0;  // x_t - sigma_t G(x_t, t)
  ForwardCache cache;
};

GeneratorOutput run_generator(const DistillState& state, const GeneratorInput& input,
                              bool keep_cache = true);

/// Generator parameter gradient for an upstream gradient on x0.
ParamVector generator_backward(const DistillState& state, const GeneratorInput& input,
                               const GeneratorOutput& output, const Matrix& grad_x0);

/// Denoised predictions of the weak (real) and strong (fake) views at a
/// re-noised copy of the generator output. Both are treated as constants.
struct ViewPredictions {
  std::vector<double> t;
  Matrix x_t;
  Matrix x0_real;
  Matrix x0_fake;
};

ViewPredictions view_predictions(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                 std::span<const double> t, const Matrix& noise);
/// Re-noises per config().dmd_timestep.
ViewPredictions view_predictions(const DistillState& state, const GeneratorInput& input,
                                 const Matrix& x0, Rng& rng);

/// A surrogate loss expressed through its gradient on the generator output.
struct X0Term {
  double loss = 0.0;
  Matrix grad_x0;
  Matrix direction;  // per-sample direction d, grad_x0 = d / n
};

/// d = x0_fake - x0_real (optionally divided by mean|x0_real - x0| per sample);
/// surrogate 1/2 ||x0 - stopgrad(x0 - d)||^2.
X0Term dmd_term(const DistillState& state, const Matrix& x0, const ViewPredictions& views);
/// d = x0_fake - x_gt with the same surrogate construction.
X0Term reg_term(const ViewPredictions& views, const Matrix& x_gt);
/// -mean D(features(x0 noised at t with `noise`)).
X0Term generator_adversarial_term(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                  std::span<const double> t, const Matrix& noise);
/// w * mean ||x0 - target||^2.
X0Term pair_regression_term(const Matrix& x0, const Matrix& target);

struct GeneratorLoss {
  double loss = 0.0;
  ParamVector grad;
  Matrix direction;
};

GeneratorLoss dmd_generator_loss(const DistillState& state, const GeneratorInput& input, Rng& rng);
GeneratorLoss reg_generator_loss(const DistillState& state, const GeneratorInput& input,
                                 const Matrix& x_gt, Rng& rng);

struct BranchLoss {
  double loss = 0.0;
  ParamVector grad;  // over branch factors
};

/// || v_fake(x_t', t') - (eps' - x0) ||^2 with x0 = stopgrad(generator output).
BranchLoss diffusion_branch_term(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                 std::span<const double> t, const Matrix& noise);
BranchLoss diffusion_branch_loss(const DistillState& state, const GeneratorInput& input, Rng& rng);

/// Frozen-backbone features fed to the discriminator head.
Matrix discriminator_features(const DistillState& state, const Matrix& x, const Matrix* cond,
                              std::span<const double> t, const Matrix& noise,
                              ForwardCache* cache = nullptr);

struct DiscriminatorLoss {
  double loss = 0.0;
  ParamVector grad;  // over disc/
  HingeLoss hinge;
};

DiscriminatorLoss discriminator_term(const DistillState& state, const Matrix& x0_fake,
                                     const Matrix& x_gt, const Matrix* cond,
                                     std::span<const double> t, const Matrix& noise_fake,
                                     const Matrix& noise_real);

struct AdversarialLosses {
  double l_dis = 0.0;
  ParamVector dis_grad;
  double l_gen = 0.0;
  ParamVector gen_grad;
};

AdversarialLosses adversarial_losses(const DistillState& state, const GeneratorInput& input,
                                     const DataBatch& gt, Rng& rng);

/// One row of per-iteration telemetry.
struct RunMetrics {
  long iter = 0;
  double l_dmd = 0.0;
  double l_reg = 0.0;
  double l_diff = 0.0;
  double l_dis = 0.0;
  double l_gen = 0.0;
  double l_distill = 0.0;
  double grad_norm_phi = 0.0;
  double grad_norm_branch = 0.0;
  bool reg_active = false;
  std::optional<double> w2_snapshot;
  std::optional<double> mmd_snapshot;
};

inline constexpr const char* kMetricsHeader =
    "iter,l_dmd,l_reg,l_diff,l_dis,l_gen,grad_norm_phi,grad_norm_branch,w2_snapshot,mmd_snapshot";

std::string metrics_csv_row(const RunMetrics& row);

/// One macro-iteration: a generator update followed by
/// config().critic_updates branch + discriminator updates.
RunMetrics train_step(DistillState& state, const Dataset& dataset, Rng& rng);

struct CurriculumPoint {
  std::size_t iter = 0;
  double w_distill = 0.0;
  double w_dmd = 0.0;
  double l_distill = 0.0;
};

using StepObserver = std::function<void(DistillState&, RunMetrics&)>;

/// Trains a one-step generator (schedule {1000}) from a frozen few-step
/// student, adding the pair-regression term whose weight follows `curriculum`.
/// Returns the weight trace; the trained generator is left in `state`.
std::vector<CurriculumPoint> one_step_curriculum(DistillState& state, const PairTeacher& student,
                                                 const CurriculumSchedule& curriculum,
                                                 std::size_t iterations, const Dataset& dataset,
                                                 Rng& rng, const StepObserver& observe = {});

/// Closed-form check that weak-to-strong matching rescales the rewritten
/// distribution-matching objective by ((alpha_strong - alpha_weak) / alpha_strong)^2.
struct Prop1Problem {
  std::size_t hidden = 32;
  std::size_t batch = 16;
  std::uint64_t seed = 11;
  LoraMode mode = LoraMode::Output;
};

struct Prop1Report {
  double alpha_weak = 0.0;
  double alpha_strong = 1.0;
  ParamVector lhs;  // weak-to-strong generator gradient
  ParamVector rhs;  // vanilla generator gradient
  double scale_factor = 1.0;
  double max_abs_deviation = 0.0;
  double realization_error = 0.0;  // |strong view - (eps' - G)| after fitting the branch
};

Prop1Report verify_prop1(const Prop1Problem& problem, double alpha_weak, double alpha_strong);

/// Finite-difference check of every distillation loss on a small problem.
std::map<std::string, double> gradcheck_suite(std::size_t probes = 200, double h = 1e-5,
                                              std::uint64_t seed = 5);

}  // namespace w2sd
