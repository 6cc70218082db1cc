#include "w2sd/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "w2sd/errors.hpp"

namespace w2sd {

namespace {

template <class E>
struct EnumName {
  E value;
  std::string_view name;
};

constexpr EnumName<RunMode> kModes[] = {
    {RunMode::Pretrain, "pretrain"},
    {RunMode::DistillW2svd, "distill-w2svd"},
    {RunMode::DistillVanillaDmd, "distill-vanilla-dmd"},
    {RunMode::TrainOneStep, "train-1step"},
    {RunMode::Eval, "eval"},
    {RunMode::VerifyProp1, "verify-prop1"},
    {RunMode::Gradcheck, "gradcheck"},
    {RunMode::Compare, "compare"},
};
constexpr EnumName<DatasetKind> kKinds[] = {
    {DatasetKind::GaussianMixture8, "gaussian-mixture-8"},
    {DatasetKind::Checkerboard, "checkerboard"},
    {DatasetKind::MovingDot, "moving-dot"},
};
constexpr EnumName<ConditionMode> kConditions[] = {
    {ConditionMode::Unconditional, "none"},
    {ConditionMode::FirstFrame, "first-frame"},
};
constexpr EnumName<Activation> kActivations[] = {
    {Activation::SiLU, "silu"},
    {Activation::Tanh, "tanh"},
};
constexpr EnumName<LoraMode> kLoraModes[] = {
    {LoraMode::Output, "output"},
    {LoraMode::Deep, "deep"},
};
constexpr EnumName<GeneratorInputMode> kInputs[] = {
    {GeneratorInputMode::NoisedGroundTruth, "noised-ground-truth"},
    {GeneratorInputMode::PureNoise, "pure-noise"},
};
constexpr EnumName<DmdTimestepMode> kDmdTimesteps[] = {
    {DmdTimestepMode::GeneratorStep, "generator-step"},
    {DmdTimestepMode::Schedule, "schedule"},
    {DmdTimestepMode::LogitNormal, "logit-normal"},
};
constexpr EnumName<Renoise> kRenoise[] = {
    {Renoise::Fresh, "fresh"},
    {Renoise::ReuseInitial, "reuse-initial"},
};

template <class E, std::size_t N>
std::string enum_to_string(const EnumName<E> (&table)[N], E value) {
  for (const auto& e : table)
    if (e.value == value) return std::string(e.name);
  return "?";
}

template <class E, std::size_t N>
E enum_from_string(const EnumName<E> (&table)[N], std::string_view key, std::string_view text) {
  std::string options;
  for (const auto& e : table) {
    if (e.name == text) return e.value;
    options += options.empty() ? "" : ", ";
    options += e.name;
  }
  throw ConfigError(std::string(key), "unknown value '" + std::string(text) + "' (expected " +
                                          options + ")");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw ConfigError(std::string(key), "expected a finite number, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(std::string(key),
                      "expected a nonnegative integer, got '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(std::string(key), "expected true or false, got '" + std::string(text) + "'");
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> parts;
  if (trim(text).empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    parts.push_back(trim(text.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

// Binders over a member accessor usable on const and mutable configs.
template <class Access>
Field f64(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return format_double(access(c)); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_double(key, v); }};
}

template <class Access>
Field uint(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            return std::to_string(access(c));
          },
          [access, key](RunConfig& c, std::string_view v) {
            using T = std::remove_reference_t<decltype(access(c))>;
            access(c) = static_cast<T>(parse_u64(key, v));
          }};
}

template <class Access>
Field flag(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            return std::string(access(c) ? "true" : "false");
          },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_bool(key, v); }};
}

template <class Access>
Field text(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return access(c); },
          [access](RunConfig& c, std::string_view v) { access(c) = std::string(v); }};
}

template <class E, std::size_t N, class Access>
Field choice(std::string key, const EnumName<E> (&table)[N], Access access) {
  return {key,
          [&table, access](const RunConfig& c) {
            return enum_to_string(table, access(c));
          },
          [&table, access, key](RunConfig& c, std::string_view v) {
            access(c) = enum_from_string(table, key, v);
          }};
}

template <class Access>
Field f64_list(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            std::string out;
            for (double v : access(c)) {
              if (!out.empty()) out += ",";
              out += format_double(v);
            }
            return out;
          },
          [access, key](RunConfig& c, std::string_view v) {
            std::vector<double> values;
            for (auto part : split_list(v)) values.push_back(parse_double(key, part));
            access(c) = std::move(values);
          }};
}

template <class Access>
Field size_list(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            std::string out;
            for (auto v : access(c)) {
              if (!out.empty()) out += ",";
              out += std::to_string(v);
            }
            return out;
          },
          [access, key](RunConfig& c, std::string_view v) {
            std::vector<std::size_t> values;
            for (auto part : split_list(v)) values.push_back(parse_u64(key, part));
            access(c) = std::move(values);
          }};
}

template <class Access>
Field text_list(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            std::string out;
            for (const auto& v : access(c)) {
              if (!out.empty()) out += ",";
              out += v;
            }
            return out;
          },
          [access](RunConfig& c, std::string_view v) {
            std::vector<std::string> values;
            for (auto part : split_list(v)) values.emplace_back(part);
            access(c) = std::move(values);
          }};
}

#define W2SD_AT(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      choice("run.mode", kModes, W2SD_AT(mode)),
      uint("run.seed", W2SD_AT(seed)),
      text("run.out", W2SD_AT(out)),
      flag("run.overwrite", W2SD_AT(overwrite)),
      uint("run.checkpoint_interval", W2SD_AT(checkpoint_interval)),

      choice("dataset.kind", kKinds, W2SD_AT(dataset.kind)),
      uint("dataset.size", W2SD_AT(dataset.size)),
      uint("dataset.seed", W2SD_AT(dataset.seed)),
      choice("dataset.condition", kConditions, W2SD_AT(dataset.condition)),
      uint("dataset.frames", W2SD_AT(dataset.frames)),
      uint("dataset.height", W2SD_AT(dataset.height)),
      uint("dataset.width", W2SD_AT(dataset.width)),

      size_list("net.hidden", W2SD_AT(net.hidden)),
      choice("net.activation", kActivations, W2SD_AT(net.activation)),

      f64_list("schedule.steps", W2SD_AT(schedule)),
      f64("views.alpha_weak", W2SD_AT(views.alpha_weak)),
      f64("views.alpha_strong", W2SD_AT(views.alpha_strong)),

      choice("lora.mode", kLoraModes, W2SD_AT(lora_mode)),
      uint("lora.rank", W2SD_AT(lora_rank)),
      f64("lora.init_std", W2SD_AT(lora_init_std)),

      f64("loss.w_dmd", W2SD_AT(weights.dmd)),
      f64("loss.w_reg", W2SD_AT(weights.reg)),
      f64("loss.w_gen", W2SD_AT(weights.gen)),
      f64("loss.w_distill", W2SD_AT(weights.distill)),
      flag("loss.reg_enabled", W2SD_AT(weights.reg_enabled)),
      flag("loss.normalizer_enabled", W2SD_AT(weights.normalizer_enabled)),

      f64("curriculum.distill_start", W2SD_AT(curriculum.distill_start)),
      f64("curriculum.distill_end", W2SD_AT(curriculum.distill_end)),
      f64("curriculum.dmd_start", W2SD_AT(curriculum.dmd_start)),
      f64("curriculum.dmd_end", W2SD_AT(curriculum.dmd_end)),
      uint("curriculum.ramp", W2SD_AT(curriculum.ramp)),

      f64("adam.beta1", W2SD_AT(adam.beta1)),
      f64("adam.beta2", W2SD_AT(adam.beta2)),
      f64("adam.eps", W2SD_AT(adam.eps)),

      f64("sampler.logit_mean", W2SD_AT(logit_mean)),
      f64("sampler.logit_std", W2SD_AT(logit_std)),

      uint("pretrain.iterations", W2SD_AT(pretrain.iterations)),
      uint("pretrain.batch_size", W2SD_AT(pretrain.batch_size)),
      f64("pretrain.lr", W2SD_AT(pretrain.lr)),
      flag("pretrain.cosine_decay", W2SD_AT(pretrain.cosine_decay)),
      uint("pretrain.sample_steps", W2SD_AT(pretrain.sample_steps)),

      uint("distill.iterations", W2SD_AT(distill.iterations)),
      uint("distill.batch_size", W2SD_AT(distill.batch_size)),
      f64("distill.generator_lr", W2SD_AT(distill.generator_lr)),
      f64("distill.critic_lr", W2SD_AT(distill.critic_lr)),
      f64("distill.generator_lr_final", W2SD_AT(distill.generator_lr_final)),
      uint("distill.critic_updates", W2SD_AT(distill.critic_updates)),
      uint("distill.disc_tap", W2SD_AT(distill.disc_tap)),
      uint("distill.disc_hidden", W2SD_AT(distill.disc_hidden)),
      flag("distill.disc_noised", W2SD_AT(distill.disc_noised)),
      choice("distill.generator_input", kInputs, W2SD_AT(distill.generator_input)),
      choice("distill.dmd_timestep", kDmdTimesteps, W2SD_AT(distill.dmd_timestep)),
      f64("distill.reg_eta_factor", W2SD_AT(distill.reg_eta_factor)),
      uint("distill.reg_window", W2SD_AT(distill.reg_window)),
      text("distill.teacher_checkpoint", W2SD_AT(distill.teacher_checkpoint)),

      uint("onestep.iterations", W2SD_AT(onestep.iterations)),
      text("onestep.student_checkpoint", W2SD_AT(onestep.student_checkpoint)),
      choice("onestep.pair_renoise", kRenoise, W2SD_AT(onestep.pair_renoise)),

      uint("eval.samples", W2SD_AT(eval.samples)),
      uint("eval.projections", W2SD_AT(eval.projections)),
      uint("eval.projection_seed", W2SD_AT(eval.projection_seed)),
      uint("eval.seed", W2SD_AT(eval.seed)),
      uint("eval.interval", W2SD_AT(eval.interval)),
      uint("eval.snapshot_samples", W2SD_AT(eval.snapshot_samples)),
      text("eval.checkpoint", W2SD_AT(eval.checkpoint)),

      f64("collapse.threshold", W2SD_AT(collapse.threshold)),
      uint("collapse.patience", W2SD_AT(collapse.patience)),
      flag("collapse.fatal", W2SD_AT(collapse.fatal)),

      uint("gradcheck.probes", W2SD_AT(gradcheck.probes)),
      f64("gradcheck.h", W2SD_AT(gradcheck.h)),
      f64("gradcheck.tolerance", W2SD_AT(gradcheck.tolerance)),
      uint("gradcheck.seed", W2SD_AT(gradcheck.seed)),

      uint("prop1.hidden", W2SD_AT(prop1.hidden)),
      uint("prop1.batch", W2SD_AT(prop1.batch)),
      uint("prop1.seed", W2SD_AT(prop1.seed)),
      f64_list("prop1.alpha_weak", W2SD_AT(prop1.alpha_weak)),
      f64_list("prop1.alpha_strong", W2SD_AT(prop1.alpha_strong)),
      f64("prop1.tolerance", W2SD_AT(prop1.tolerance)),

      text_list("compare.inputs", W2SD_AT(compare_inputs)),
  };
  return table;
}

#undef W2SD_AT

void require_positive(std::size_t v, const char* key) {
  if (v == 0) throw ConfigError(key, "must be positive");
}

void require_positive(double v, const char* key) {
  if (!(v > 0.0)) throw ConfigError(key, "must be positive");
}

}  // namespace

std::string_view to_string(RunMode mode) {
  for (const auto& e : kModes)
    if (e.value == mode) return e.name;
  return "?";
}

RunMode parse_run_mode(std::string_view text) { return enum_from_string(kModes, "run.mode", text); }

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, trim(value));
      return;
    }
  }
  throw ConfigError(std::string(key), "unknown key");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second)
      throw ConfigError(std::string(key), "assigned more than once");
    set_config_value(config, key, line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      section = sec;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MlpConfig RunConfig::net_config() const {
  const Dataset data(dataset);
  MlpConfig c = net;
  c.sample_dim = data.dim();
  c.cond_dim = data.cond_dim();
  return c;
}

DistillConfig RunConfig::distill_config(std::vector<double> steps) const {
  DistillConfig c;
  c.schedule = TimestepSchedule(std::move(steps));
  c.scales = views;
  c.lora_mode = lora_mode;
  c.lora_rank = lora_rank;
  c.lora_init_std = lora_init_std;
  c.weights = weights;
  c.generator_opt = AdamConfig{distill.generator_lr, adam.beta1, adam.beta2, adam.eps};
  c.critic_opt = AdamConfig{distill.critic_lr, adam.beta1, adam.beta2, adam.eps};
  c.batch_size = distill.batch_size;
  c.critic_updates = distill.critic_updates;
  c.disc_tap = distill.disc_tap;
  c.disc_hidden = distill.disc_hidden;
  c.disc_noised = distill.disc_noised;
  c.generator_input = distill.generator_input;
  c.dmd_timestep = distill.dmd_timestep;
  c.logit_mean = logit_mean;
  c.logit_std = logit_std;
  c.reg_eta_factor = distill.reg_eta_factor;
  c.reg_window = distill.reg_window;
  c.pair_renoise = onestep.pair_renoise;
  return c;
}

RunConfig RunConfig::effective() const {
  RunConfig c = *this;
  if (c.mode == RunMode::DistillVanillaDmd) {
    c.views.alpha_weak = 0.0;
    c.weights.reg_enabled = false;
    c.weights.reg = 0.0;
  }
  return c;
}

void RunConfig::validate() const {
  if (dataset.size == 0) throw ConfigError("dataset.size", "must be positive");
  if (dataset.kind == DatasetKind::MovingDot) {
    require_positive(dataset.frames, "dataset.frames");
    require_positive(dataset.height, "dataset.height");
    require_positive(dataset.width, "dataset.width");
  } else if (dataset.condition != ConditionMode::Unconditional) {
    throw ConfigError("dataset.condition", "first-frame conditioning needs moving-dot data");
  }
  if (net.hidden.empty()) throw ConfigError("net.hidden", "needs at least one hidden layer");
  for (auto w : net.hidden) require_positive(w, "net.hidden");
  try {
    TimestepSchedule s(schedule);
  } catch (const std::exception& e) {
    throw ConfigError("schedule.steps", e.what());
  }
  views.validate();
  require_positive(lora_rank, "lora.rank");
  if (!(lora_init_std >= 0.0)) throw ConfigError("lora.init_std", "must be nonnegative");
  weights.validate();
  if (curriculum.distill_end > curriculum.distill_start)
    throw ConfigError("curriculum.distill_end", "the distillation weight must not increase");
  if (curriculum.dmd_end < curriculum.dmd_start)
    throw ConfigError("curriculum.dmd_end", "the distribution-matching weight must not decrease");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam.beta1", "must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam.beta2", "must be in [0, 1)");
  require_positive(adam.eps, "adam.eps");
  require_positive(logit_std, "sampler.logit_std");

  require_positive(pretrain.batch_size, "pretrain.batch_size");
  require_positive(pretrain.lr, "pretrain.lr");
  require_positive(pretrain.sample_steps, "pretrain.sample_steps");

  require_positive(distill.batch_size, "distill.batch_size");
  require_positive(distill.generator_lr, "distill.generator_lr");
  require_positive(distill.critic_lr, "distill.critic_lr");
  if (!(distill.generator_lr_final > 0.0 && distill.generator_lr_final <= 1.0))
    throw ConfigError("distill.generator_lr_final", "must be in (0, 1]");
  require_positive(distill.critic_updates, "distill.critic_updates");
  if (distill.disc_tap >= net.hidden.size())
    throw ConfigError("distill.disc_tap", "must index a hidden layer");
  require_positive(distill.disc_hidden, "distill.disc_hidden");
  require_positive(distill.reg_eta_factor, "distill.reg_eta_factor");
  require_positive(distill.reg_window, "distill.reg_window");

  require_positive(eval.samples, "eval.samples");
  require_positive(eval.projections, "eval.projections");
  if (eval.interval > 0) require_positive(eval.snapshot_samples, "eval.snapshot_samples");
  require_positive(collapse.threshold, "collapse.threshold");
  require_positive(collapse.patience, "collapse.patience");
  require_positive(gradcheck.probes, "gradcheck.probes");
  require_positive(gradcheck.h, "gradcheck.h");
  require_positive(prop1.hidden, "prop1.hidden");
  require_positive(prop1.batch, "prop1.batch");
  if (prop1.batch > prop1.hidden) throw ConfigError("prop1.batch", "must not exceed prop1.hidden");

  const bool distills = mode == RunMode::DistillW2svd || mode == RunMode::DistillVanillaDmd ||
                        mode == RunMode::TrainOneStep;
  if (distills && distill.teacher_checkpoint.empty())
    throw ConfigError("distill.teacher_checkpoint", "required in " + std::string(to_string(mode)));
  if (mode == RunMode::TrainOneStep && onestep.student_checkpoint.empty())
    throw ConfigError("onestep.student_checkpoint", "required in train-1step");
  if (mode == RunMode::Eval && eval.checkpoint.empty())
    throw ConfigError("eval.checkpoint", "required in eval");
  if (out.empty()) throw ConfigError("run.out", "must not be empty");
}

}  // namespace w2sd
