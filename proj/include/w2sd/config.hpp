#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "w2sd/data.hpp"
#include "w2sd/distill.hpp"
#include "w2sd/mlp.hpp"

namespace w2sd {

enum class RunMode {
  Pretrain,
  DistillW2svd,
  DistillVanillaDmd,
  TrainOneStep,
  Eval,
  VerifyProp1,
  Gradcheck,
  Compare,
};

std::string_view to_string(RunMode mode);
RunMode parse_run_mode(std::string_view text);

struct PretrainSettings {
  std::size_t iterations = 20000;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  bool cosine_decay = true;
  std::size_t sample_steps = 28;  // Euler steps when sampling the teacher

  bool operator==(const PretrainSettings&) const = default;
};

struct DistillSettings {
  std::size_t iterations = 3000;
  std::size_t batch_size = 64;
  double generator_lr = 1e-4;
  double critic_lr = 4e-4;
  double generator_lr_final = 1.0;  // fraction of generator_lr reached at the last iteration
  std::size_t critic_updates = 5;
  std::size_t disc_tap = 1;
  std::size_t disc_hidden = 64;
  bool disc_noised = true;
  GeneratorInputMode generator_input = GeneratorInputMode::NoisedGroundTruth;
  DmdTimestepMode dmd_timestep = DmdTimestepMode::LogitNormal;
  double reg_eta_factor = 2.0;
  std::size_t reg_window = 100;
  std::string teacher_checkpoint;

  bool operator==(const DistillSettings&) const = default;
};

struct OneStepSettings {
  std::size_t iterations = 2000;
  std::string student_checkpoint;
  Renoise pair_renoise = Renoise::ReuseInitial;

  bool operator==(const OneStepSettings&) const = default;
};

struct EvalSettings {
  std::size_t samples = 4096;
  std::size_t projections = 128;
  std::uint64_t projection_seed = 1234;
  std::uint64_t seed = 2024;
  std::size_t interval = 100;  // snapshot period in iterations, 0 disables
  std::size_t snapshot_samples = 1024;
  std::string checkpoint;      // eval mode input

  bool operator==(const EvalSettings&) const = default;
};

struct CollapseSettings {
  double threshold = 1.5;
  std::size_t patience = 3;
  bool fatal = false;

  bool operator==(const CollapseSettings&) const = default;
};

struct GradcheckSettings {
  std::size_t probes = 200;
  double h = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 5;

  bool operator==(const GradcheckSettings&) const = default;
};

struct Prop1Settings {
  std::size_t hidden = 32;
  std::size_t batch = 16;
  std::uint64_t seed = 11;
  std::vector<double> alpha_weak{0.0, 0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<double> alpha_strong{0.5, 1.0, 2.0};
  double tolerance = 1e-10;

  bool operator==(const Prop1Settings&) const = default;
};

struct RunConfig {
  RunMode mode = RunMode::Pretrain;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  bool overwrite = false;
  std::size_t checkpoint_interval = 1000;  // 0 keeps only the final checkpoint

  DatasetSpec dataset;
  MlpConfig net;  // sample_dim / cond_dim follow the dataset
  std::vector<double> schedule = TimestepSchedule::four_step().steps();
  ViewScales views;
  LoraMode lora_mode = LoraMode::Deep;
  std::size_t lora_rank = 4;
  double lora_init_std = 0.02;
  LossWeights weights;
  CurriculumSchedule curriculum;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};  // lr unused; betas / eps shared by all optimizers
  double logit_mean = 0.0;
  double logit_std = 1.0;

  PretrainSettings pretrain;
  DistillSettings distill;
  OneStepSettings onestep;
  EvalSettings eval;
  CollapseSettings collapse;
  GradcheckSettings gradcheck;
  Prop1Settings prop1;
  std::vector<std::string> compare_inputs;

  bool operator==(const RunConfig&) const = default;

  /// Field-level checks; throws ConfigError naming the offending key.
  void validate() const;

  /// Net configuration with input sizes taken from the dataset.
  MlpConfig net_config() const;
  /// Distillation settings for the generator schedule `steps`.
  DistillConfig distill_config(std::vector<double> steps) const;
  /// The configuration actually executed: vanilla DMD forces alpha_weak = 0
  /// and disables the regularizer.
  RunConfig effective() const;
};

/// Flat `section.key = value` text, one entry per line, '#' comments.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Every key, in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);
/// FNV-1a of the serialized configuration, 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Applies one `key = value` assignment.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

}  // namespace w2sd
