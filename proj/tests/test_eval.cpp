#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "w2sd/errors.hpp"
#include "w2sd/eval.hpp"
#include "w2sd/rng.hpp"

using namespace w2sd;

namespace {

// Quantile-function integral on a fine grid.
double w2_quantile_oracle(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const int grid = 200000;
  double s = 0.0;
  for (int k = 0; k < grid; ++k) {
    const double u = (k + 0.5) / grid;
    const double qa = a[static_cast<std::size_t>(u * a.size())];
    const double qb = b[static_cast<std::size_t>(u * b.size())];
    s += (qa - qb) * (qa - qb);
  }
  return std::sqrt(s / grid);
}

double mmd_oracle(const Matrix& a, const Matrix& b, double bw) {
  const auto k = [bw](const auto& x, const auto& y) {
    return std::exp(-(x - y).squaredNorm() / (2 * bw * bw));
  };
  double aa = 0, bb = 0, ab = 0;
  const auto m = a.rows(), n = b.rows();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) aa += k(a.row(i), a.row(j));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) bb += k(b.row(i), b.row(j));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ab += k(a.row(i), b.row(j));
  return aa / (m * (m - 1.0)) + bb / (n * (n - 1.0)) - 2 * ab / (double(m) * n);
}

}  // namespace

TEST(SlicedW2, IdenticalSetsAreZero) {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(500, 3);
  EXPECT_EQ(sliced_w2(a, a, 32, rng), 0.0);
}

TEST(SlicedW2, PointMasses) {
  Rng rng(2);
  EXPECT_NEAR(sliced_w2(Matrix::Zero(10, 1), Matrix::Constant(10, 1, 3.0), 16, rng), 3.0, 1e-12);
  // In 2-D each direction sees a distance of 3 |cos(theta)|, averaging 6 / pi.
  Matrix shifted = Matrix::Zero(10, 2);
  shifted.col(0).setConstant(3.0);
  EXPECT_NEAR(sliced_w2(Matrix::Zero(10, 2), shifted, 20000, rng), 6.0 / M_PI, 0.03);
}

TEST(SlicedW2, ShiftedGaussians) {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(20000, 1);
  const Matrix b = (rng.normal_matrix(20000, 1).array() + 2.0).matrix();
  EXPECT_NEAR(sliced_w2(a, b, 4, rng), 2.0, 0.05);
}

TEST(SlicedW2, MonotoneInShift) {
  Rng rng(4);
  const Matrix a = rng.normal_matrix(4000, 2);
  const Matrix b = rng.normal_matrix(4000, 2);
  double prev = 0.0;
  for (double c : {0.0, 0.5, 1.0}) {
    Rng proj(5);
    const double w = sliced_w2(a, (b.array() + c).matrix(), 64, proj);
    EXPECT_GT(w, prev);
    prev = w;
  }
}

TEST(SlicedW2, Errors) {
  Rng rng(6);
  EXPECT_THROW(sliced_w2(Matrix(0, 2), Matrix::Zero(3, 2), 4, rng), ConfigError);
  EXPECT_THROW(sliced_w2(Matrix::Zero(3, 1), Matrix::Zero(3, 2), 4, rng), ConfigError);
  EXPECT_THROW(sliced_w2(Matrix::Zero(3, 2), Matrix::Zero(3, 2), 0, rng), ConfigError);
}

TEST(Wasserstein1d, UnequalSizesMatchQuantileOracle) {
  Rng rng(7);
  std::vector<double> a(400), b(250);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = 0.5 + 2.0 * rng.normal();
  EXPECT_NEAR(wasserstein2_1d(a, b), w2_quantile_oracle(a, b), 1e-3);
  EXPECT_NEAR(wasserstein2_1d({0.0}, {1.0, 3.0}), std::sqrt(5.0), 1e-12);
}

TEST(Mmd, MatchesDirectSum) {
  Rng rng(8);
  const Matrix a = rng.normal_matrix(40, 2);
  const Matrix b = (rng.normal_matrix(30, 2).array() + 0.3).matrix();
  EXPECT_NEAR(rbf_mmd2(a, b, 0.8), mmd_oracle(a, b, 0.8), 1e-12);
}

TEST(Mmd, FarPointMassesApproachTwo) {
  EXPECT_NEAR(rbf_mmd2(Matrix::Zero(5, 2), Matrix::Constant(5, 2, 100.0), 1.0), 2.0, 1e-12);
}

TEST(Mmd, SameDistributionIsUnbiased) {
  Rng rng(9);
  const int reps = 30;
  std::vector<double> v(reps);
  for (auto& m : v) m = rbf_mmd2(rng.normal_matrix(200, 2), rng.normal_matrix(200, 2), 1.0);
  double mean = 0, var = 0;
  for (double m : v) mean += m / reps;
  for (double m : v) var += (m - mean) * (m - mean) / (reps - 1);
  EXPECT_LE(std::abs(mean), 3.0 * std::sqrt(var / reps));
}

TEST(Mmd, IdenticalSetsClampToZero) {
  const Dataset ds(DatasetSpec{});
  Rng rng(10);
  const auto gt = ds.sample_batch(300, rng);
  const auto r = evaluate_samples(ds, gt.x, gt.x);
  EXPECT_LE(r.mmd_raw, 0.0);
  EXPECT_EQ(r.mmd, 0.0);
  EXPECT_EQ(r.w2, 0.0);
  EXPECT_EQ(r.max_mean_error, 0.0);
  EXPECT_EQ(r.max_std_error, 0.0);
}

TEST(Coverage, CountsModesWithFairShare) {
  const Dataset ds(DatasetSpec{});
  const auto c = Dataset::mixture_centers();
  Matrix one(80, 2);
  for (int i = 0; i < 80; ++i) one.row(i) = c[0].transpose();
  EXPECT_DOUBLE_EQ(mode_coverage(ds, one), 1.0 / 8.0);
  Matrix all(80, 2);
  for (int i = 0; i < 80; ++i) all.row(i) = c[i % 8].transpose();
  EXPECT_DOUBLE_EQ(mode_coverage(ds, all), 1.0);
  // A mode holding less than 10% of its share does not count.
  all.row(0) = c[1].transpose();
  all.row(8) = c[1].transpose();
  all.row(16) = c[1].transpose();
  EXPECT_DOUBLE_EQ(mode_coverage(ds, all), 1.0);
  Matrix far = Matrix::Constant(80, 2, 3.0);
  EXPECT_EQ(mode_coverage(ds, far), 0.0);
}

TEST(Evaluate, IndependentDrawsScoreNearTheSplitFloor) {
  const Dataset ds(DatasetSpec{});
  Rng a(11), b(12);
  const auto gt = ds.sample_batch(4096, a);
  const auto gen = ds.sample_batch(4096, b);
  const auto r = evaluate_samples(ds, gen.x, gt.x);
  EXPECT_LT(r.w2, 0.1);
  EXPECT_EQ(r.mode_coverage, 1.0);
  EXPECT_LT(r.mmd, 1e-3);
  EXPECT_LT(r.max_mean_error, 0.05);
  EXPECT_EQ(r.samples, 4096u);
}

TEST(Evaluate, ReportJsonFields) {
  const Dataset ds(DatasetSpec{});
  Rng a(13), b(14);
  const auto r = evaluate_samples(ds, ds.sample_batch(256, a).x, ds.sample_batch(256, b).x);
  const auto j = nlohmann::json::parse(report_json(r, "0123456789abcdef", "abc123", true));
  for (const char* k : {"w2", "mmd", "mmd_raw", "mode_coverage", "max_mean_error", "max_std_error"}) {
    ASSERT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(std::isfinite(j[k].get<double>())) << k;
  }
  EXPECT_EQ(j["config_hash"], "0123456789abcdef");
  EXPECT_EQ(j["git_describe"], "abc123");
  EXPECT_EQ(j["collapse"], true);
}

TEST(CollapseMonitor, ImprovingTraceNeverFires) {
  CollapseMonitor m;
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(m.observe(1.0 / (1 + i)));
  EXPECT_NEAR(m.best(), 0.01, 1e-15);
}

TEST(CollapseMonitor, DoublingTraceFires) {
  CollapseMonitor m(1.5, 3);
  double w = 0.1;
  EXPECT_FALSE(m.observe(w));
  EXPECT_FALSE(m.observe(w *= 2));
  EXPECT_FALSE(m.observe(w *= 2));
  EXPECT_TRUE(m.observe(w *= 2));
  EXPECT_TRUE(m.fired());
  EXPECT_TRUE(m.observe(0.01));  // latched
}

TEST(CollapseMonitor, NonFiniteCountsAsRegression) {
  CollapseMonitor m(1.5, 2);
  m.observe(0.1);
  m.observe(NAN);
  EXPECT_TRUE(m.observe(INFINITY));
}
