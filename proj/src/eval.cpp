#include "w2sd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("wasserstein2_1d", "empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
  }
  // Integrate (F_a^-1(u) - F_b^-1(u))^2 over the merged quantile breakpoints.
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double ra = wa, rb = wb, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    s += m * (a[i] - b[j]) * (a[i] - b[j]);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15) ++i, ra = wa;
    if (rb <= 1e-15) ++j, rb = wb;
  }
  return std::sqrt(s);
}

double sliced_w2(const Matrix& a, const Matrix& b, std::size_t projections, Rng& rng) {
  if (a.rows() == 0 || b.rows() == 0) throw ConfigError("sliced_w2", "empty sample set");
  if (a.cols() != b.cols()) throw ConfigError("sliced_w2", "dimension mismatch");
  if (projections == 0) throw ConfigError("sliced_w2", "need at least one projection");
  double total = 0.0;
  std::vector<double> pa(static_cast<std::size_t>(a.rows()));
  std::vector<double> pb(static_cast<std::size_t>(b.rows()));
  for (std::size_t p = 0; p < projections; ++p) {
    Vector dir(a.cols());
    do {
      for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = rng.normal();
    } while (dir.norm() == 0.0);
    dir.normalize();
    Eigen::Map<Vector>(pa.data(), a.rows()) = a * dir;
    Eigen::Map<Vector>(pb.data(), b.rows()) = b * dir;
    total += wasserstein2_1d(pa, pb);
  }
  return total / static_cast<double>(projections);
}

double rbf_mmd2(const Matrix& a, const Matrix& b, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ConfigError("rbf_mmd2", "bandwidth must be positive");
  if (a.cols() != b.cols()) throw ConfigError("rbf_mmd2", "dimension mismatch");
  if (a.rows() < 2 || b.rows() < 2) throw ConfigError("rbf_mmd2", "need at least two samples per set");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  const auto kernel_sum = [inv](const Matrix& x, const Matrix& y, bool skip_diag) {
    const Vector nx = x.rowwise().squaredNorm();
    const Vector ny = y.rowwise().squaredNorm();
    const Matrix cross = x * y.transpose();
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        if (skip_diag && i == j) continue;
        const double d2 = std::max(0.0, nx(i) + ny(j) - 2.0 * cross(i, j));
        s += std::exp(-d2 * inv);
      }
    }
    return s;
  };
  const double m = static_cast<double>(a.rows());
  const double n = static_cast<double>(b.rows());
  const double kaa = kernel_sum(a, a, true) / (m * (m - 1.0));
  const double kbb = kernel_sum(b, b, true) / (n * (n - 1.0));
  const double kab = kernel_sum(a, b, false) / (m * n);
  return kaa + kbb - 2.0 * kab;
}

double median_pairwise_distance(const Matrix& a, std::size_t max_points) {
  const auto n = std::min<Eigen::Index>(a.rows(), static_cast<Eigen::Index>(max_points));
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((a.row(i) - a.row(j)).norm());
  if (d.empty()) throw ConfigError("median_pairwise_distance", "need at least two samples");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

double mode_coverage(const Dataset& dataset, const Matrix& samples) {
  const std::size_t k = dataset.mode_count();
  if (k == 0 || samples.rows() == 0) return 0.0;
  std::vector<std::size_t> counts(k, 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const auto mode = dataset.mode_of(samples.row(i).transpose());
    if (mode && *mode < k) ++counts[*mode];
  }
  const double needed = 0.1 * static_cast<double>(samples.rows()) / static_cast<double>(k);
  std::size_t covered = 0;
  for (auto c : counts)
    if (c > 0 && static_cast<double>(c) >= needed) ++covered;
  return static_cast<double>(covered) / static_cast<double>(k);
}

MetricReport evaluate_samples(const Dataset& dataset, const Matrix& generated,
                              const Matrix& ground_truth, const MetricOptions& options) {
  if (generated.cols() != ground_truth.cols())
    throw ConfigError("evaluate", "generated samples do not match the dataset dimension");
  MetricReport r;
  r.samples = static_cast<std::size_t>(generated.rows());
  Rng proj(options.projection_seed);
  r.w2 = sliced_w2(generated, ground_truth, options.projections, proj);
  if (options.with_mmd) {
    const double bw = std::max(1e-6, median_pairwise_distance(ground_truth));
    r.mmd_raw = rbf_mmd2(generated, ground_truth, bw);
    r.mmd = std::max(0.0, r.mmd_raw);
  }
  r.mode_coverage = mode_coverage(dataset, generated);
  const Eigen::RowVectorXd mg = generated.colwise().mean();
  const Eigen::RowVectorXd mt = ground_truth.colwise().mean();
  const Eigen::RowVectorXd sg =
      ((generated.rowwise() - mg).array().square().colwise().mean()).sqrt().matrix();
  const Eigen::RowVectorXd st =
      ((ground_truth.rowwise() - mt).array().square().colwise().mean()).sqrt().matrix();
  r.max_mean_error = (mg - mt).cwiseAbs().maxCoeff();
  r.max_std_error = (sg - st).cwiseAbs().maxCoeff();
  return r;
}

std::string report_json(const MetricReport& report, const std::string& config_hash,
                        const std::string& git_describe, bool collapse_flag) {
  nlohmann::ordered_json j;
  j["w2"] = report.w2;
  j["mmd"] = report.mmd;
  j["mmd_raw"] = report.mmd_raw;
  j["mode_coverage"] = report.mode_coverage;
  j["max_mean_error"] = report.max_mean_error;
  j["max_std_error"] = report.max_std_error;
  j["samples"] = report.samples;
  j["collapse"] = collapse_flag;
  j["config_hash"] = config_hash;
  j["git_describe"] = git_describe;
  return j.dump(2) + "\n";
}

CollapseMonitor::CollapseMonitor(double threshold, std::size_t patience)
    : threshold_(threshold), patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (!(threshold > 1.0)) throw ConfigError("monitor.threshold", "must exceed 1");
  if (patience == 0) throw ConfigError("monitor.patience", "must be positive");
}

bool CollapseMonitor::observe(double w2) {
  window_.push_back(w2);
  if (window_.size() > 64) window_.pop_front();
  if (!std::isfinite(w2)) {
    ++streak_;
  } else if (w2 > best_ * threshold_) {
    ++streak_;
  } else {
    streak_ = 0;
    best_ = std::min(best_, w2);
  }
  if (streak_ >= patience_) fired_ = true;
  return fired_;
}

}  // namespace w2sd
