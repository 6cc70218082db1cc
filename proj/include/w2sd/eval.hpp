#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>

#include "w2sd/data.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class Rng;

/// Mean over `projections` random unit directions of the 1-D quadratic
/// Wasserstein distance between the projected empirical distributions.
double sliced_w2(const Matrix& a, const Matrix& b, std::size_t projections, Rng& rng);

/// Exact W2 between two 1-D empirical distributions (any sizes).
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Unbiased MMD^2 with k(x, y) = exp(-||x - y||^2 / (2 bandwidth^2)).
double rbf_mmd2(const Matrix& a, const Matrix& b, double bandwidth);

/// Median of pairwise distances over (at most) the first `max_points` rows.
double median_pairwise_distance(const Matrix& a, std::size_t max_points = 1000);

/// Fraction of the dataset's modes that receive at least 10% of their fair
/// share of `samples`.
double mode_coverage(const Dataset& dataset, const Matrix& samples);

inline constexpr double kMmdClampThreshold = 1e-9;

struct MetricReport {
  double w2 = 0.0;
  double mmd = 0.0;      // clamped at 0
  double mmd_raw = 0.0;  // unbiased estimate, may dip below 0
  double mode_coverage = 0.0;
  double max_mean_error = 0.0;  // max over dimensions of |mean_gen - mean_gt|
  double max_std_error = 0.0;   // max over dimensions of |std_gen - std_gt|
  std::size_t samples = 0;
};

struct MetricOptions {
  std::size_t projections = 128;
  std::uint64_t projection_seed = 1234;
  bool with_mmd = true;
};

/// All metrics of `generated` against `ground_truth`. The MMD bandwidth is
/// the median pairwise distance of the ground truth set.
MetricReport evaluate_samples(const Dataset& dataset, const Matrix& generated,
                              const Matrix& ground_truth, const MetricOptions& options = {});

/// Flat JSON object with the report fields plus provenance strings.
std::string report_json(const MetricReport& report, const std::string& config_hash,
                        const std::string& git_describe, bool collapse_flag = false);

/// Watches sliced-W2 snapshots for training collapse: fires once w2 stays
/// above best_so_far * threshold for `patience` consecutive snapshots.
class CollapseMonitor {
 public:
  CollapseMonitor(double threshold = 1.5, std::size_t patience = 3);

  /// Returns true while the monitor is in the fired state.
  bool observe(double w2);
  bool fired() const { return fired_; }
  double best() const { return best_; }
  std::size_t streak() const { return streak_; }
  const std::deque<double>& window() const { return window_; }

 private:
  double threshold_;
  std::size_t patience_;
  double best_;
  std::size_t streak_ = 0;
  bool fired_ = false;
  std::deque<double> window_;
};

}  // namespace w2sd
