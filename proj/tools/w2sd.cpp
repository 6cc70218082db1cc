// w2sd <mode> --config <path> [--seed N] [--out DIR]

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdlib>
#include <iostream>

#include "w2sd/config.hpp"
#include "w2sd/errors.hpp"
#include "w2sd/run.hpp"

namespace {

int apply_thread_cap() {
  const char* env = std::getenv("W2SD_THREADS");
  if (env == nullptr) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*env == '\0' || *end != '\0' || n < 1) {
    std::cerr << w2sd::error_record("config", "W2SD_THREADS", "expected a positive integer")
              << "\n";
    return w2sd::kExitConfig;
  }
  Eigen::setNbThreads(static_cast<int>(n));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak-to-strong few-step distillation on synthetic data"};
  std::string mode;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> extra;
  app.add_option("mode", mode,
                 "pretrain | distill-w2svd | distill-vanilla-dmd | train-1step | eval | "
                 "verify-prop1 | gradcheck | compare")
      ->required();
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--out", out, "overrides run.out");
  app.add_option("inputs", extra, "metrics CSVs for compare (appended to compare.inputs)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : w2sd::kExitConfig;
  }

  if (const int rc = apply_thread_cap(); rc != 0) return rc;

  w2sd::RunConfig config;
  try {
    if (!config_path.empty()) config = w2sd::load_config(config_path);
    config.mode = w2sd::parse_run_mode(mode);
    if (seed) config.seed = *seed;
    if (out) config.out = *out;
    config.compare_inputs.insert(config.compare_inputs.end(), extra.begin(), extra.end());
  } catch (const w2sd::ConfigError& e) {
    std::cerr << w2sd::error_record("config", e.field(), e.what()) << "\n";
    return w2sd::kExitConfig;
  }
  return w2sd::run_guarded(config, std::cout, std::cerr);
}
