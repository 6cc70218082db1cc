#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "w2sd/checkpoint.hpp"
#include "w2sd/config.hpp"
#include "w2sd/eval.hpp"

namespace w2sd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCollapse = 3;
inline constexpr int kExitNonFinite = 4;
inline constexpr int kExitInternal = 5;

/// Raised when the collapse monitor fires and collapse.fatal is set.
class CollapseAbort : public std::runtime_error {
 public:
  CollapseAbort(long iteration, std::vector<std::string> tail);
  long iteration() const { return iteration_; }
  const std::vector<std::string>& tail() const { return tail_; }

 private:
  long iteration_;
  std::vector<std::string> tail_;
};

/// The build's `git describe` string.
const char* git_describe();

/// Executes `config` (after RunConfig::effective()). Returns the exit status;
/// configuration problems propagate as ConfigError, collapse as CollapseAbort.
int run(const RunConfig& config, std::ostream& log);

/// run() plus error handling: prints a JSON error record to `err` (and to
/// error.json in the output directory when it exists) and maps failures to
/// exit codes.
int run_guarded(const RunConfig& config, std::ostream& log, std::ostream& err);

/// JSON error record for a failure.
std::string error_record(std::string_view kind, std::string_view field, std::string_view message);

/// Metrics table: header plus string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws ConfigError if absent
};

CsvTable read_csv(const std::filesystem::path& path);

struct Comparison {
  std::string text;         // aligned summary and per-iteration table
  std::string table_csv;    // per-iteration values and differences to the first run
  std::string summary_csv;  // one row per run
};

/// Aligns metrics CSVs sharing one header. The alpha_weak column and the
/// collapse-monitor settings come from config.txt next to each CSV.
Comparison compare_runs(const std::vector<std::filesystem::path>& csvs);

/// Samples from the parameters stored in `ckpt` and scores them against the
/// evaluation split. Generator checkpoints use their stored schedule with
/// the few-step sampler; teacher checkpoints use Euler sampling.
MetricReport evaluate_checkpoint(const RunConfig& config, const Checkpoint& ckpt);

}  // namespace w2sd
