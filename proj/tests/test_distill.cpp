#include <gtest/gtest.h>

#include <cmath>

#include "w2sd/distill.hpp"
#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

using namespace w2sd;

namespace {

MlpNet small_net() { return MlpNet(MlpConfig{2, 0, {16, 16}, Activation::SiLU}); }

DistillConfig small_config(LoraMode mode = LoraMode::Deep) {
  DistillConfig c;
  c.lora_mode = mode;
  c.batch_size = 16;
  c.disc_hidden = 8;
  return c;
}

DistillState make_state(DistillConfig c, std::uint64_t seed = 3) {
  Rng rng(seed);
  const MlpNet net = small_net();
  ParamVector teacher = net.init_params(rng, "teacher/");
  return DistillState(net, std::move(teacher), std::move(c), rng);
}

void randomize_branch(DistillState& s, Rng& rng, double std) {
  for (double& v : s.branch().factors().values()) v = std * rng.normal();
}

std::vector<double> fixed_t(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = 100.0 + 850.0 * static_cast<double>(i) / n;
  return t;
}

Dataset gm8() { return Dataset(DatasetSpec{}); }

}  // namespace

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  LossWeights w;
  w.dmd = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
  LossWeights off;
  off.reg_enabled = false;
  EXPECT_EQ(off.reg_weight(), 0.0);
}

TEST(DistillState, GeneratorStartsAtTeacherAndBranchIsNoOp) {
  auto s = make_state(small_config());
  EXPECT_EQ(std::vector<double>(s.generator().values().begin(), s.generator().values().end()),
            std::vector<double>(s.teacher().values().begin(), s.teacher().values().end()));
  EXPECT_EQ(s.generator().layout()[0].name.rfind("gen/", 0), 0u);
  Rng rng(1);
  const Matrix x0 = rng.normal_matrix(16, 2);
  const auto v = view_predictions(s, x0, nullptr, fixed_t(16), rng.normal_matrix(16, 2));
  EXPECT_EQ(v.x0_fake, v.x0_real);
}

TEST(DistillState, TapBeyondHiddenLayersRejected) {
  auto c = small_config();
  c.disc_tap = 2;
  EXPECT_THROW(make_state(c), ConfigError);
}

TEST(DmdTerm, EqualScalesGiveZeroDirection) {
  auto c = small_config();
  c.scales = ViewScales{1.0, 1.0};
  auto s = make_state(c);
  Rng rng(2);
  randomize_branch(s, rng, 0.5);
  const Matrix x0 = rng.normal_matrix(16, 2);
  const auto views = view_predictions(s, x0, nullptr, fixed_t(16), rng.normal_matrix(16, 2));
  const auto term = dmd_term(s, x0, views);
  EXPECT_EQ(term.direction.norm(), 0.0);
  EXPECT_EQ(term.loss, 0.0);
}

TEST(DmdTerm, ZeroBranchGivesZeroDirection) {
  for (double aw : {0.0, 0.25, 0.75}) {
    auto c = small_config();
    c.scales = ViewScales{aw, 1.0};
    auto s = make_state(c);
    Rng rng(4);
    const Matrix x0 = rng.normal_matrix(16, 2);
    const auto views = view_predictions(s, x0, nullptr, fixed_t(16), rng.normal_matrix(16, 2));
    EXPECT_EQ(dmd_term(s, x0, views).direction.norm(), 0.0);
  }
}

TEST(DmdTerm, OutputBranchDirectionIsScaledBranchOutput) {
  auto c = small_config(LoraMode::Output);
  c.scales = ViewScales{0.25, 1.0};
  auto s = make_state(c);
  Rng rng(5);
  randomize_branch(s, rng, 0.5);
  const Matrix x0 = rng.normal_matrix(16, 2);
  const auto t = fixed_t(16);
  const auto views = view_predictions(s, x0, nullptr, t, rng.normal_matrix(16, 2));
  const Matrix zeta = eval_view(s.net(), 1.0, s.teacher(), s.branch(), views.x_t, t, nullptr) -
                      eval_view(s.net(), 0.0, s.teacher(), s.branch(), views.x_t, t, nullptr);
  Matrix expected(16, 2);
  for (int i = 0; i < 16; ++i) expected.row(i) = -sigma_of(t[i]) * 0.75 * zeta.row(i);
  const auto term = dmd_term(s, x0, views);
  EXPECT_LE((term.direction - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((term.grad_x0 - expected / 16.0).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_NEAR(term.loss, 0.5 * expected.squaredNorm() / 16.0, 1e-14);
}

TEST(DmdTerm, NormalizerDividesByRealResidual) {
  auto c = small_config();
  c.weights.normalizer_enabled = true;
  auto s = make_state(c);
  Rng rng(6);
  randomize_branch(s, rng, 0.5);
  const Matrix x0 = rng.normal_matrix(16, 2);
  const auto views = view_predictions(s, x0, nullptr, fixed_t(16), rng.normal_matrix(16, 2));
  const auto term = dmd_term(s, x0, views);
  for (int i = 0; i < 16; ++i) {
    const double scale = (views.x0_real.row(i) - x0.row(i)).cwiseAbs().mean();
    const Vector raw = (views.x0_fake.row(i) - views.x0_real.row(i)).transpose();
    EXPECT_LE((term.direction.row(i).transpose() - raw / scale).norm(), 1e-12);
  }
}

TEST(RegTerm, DirectionAndDescent) {
  auto s = make_state(small_config());
  Rng rng(7);
  randomize_branch(s, rng, 0.3);
  const auto ds = gm8();
  const auto gt = ds.sample_batch(16, rng);
  const auto input = pure_noise_input(rng.normal_matrix(16, 2));
  const auto out = run_generator(s, input);
  const auto views = view_predictions(s, out.x0, nullptr, fixed_t(16), rng.normal_matrix(16, 2));
  const auto term = reg_term(views, gt.x);
  EXPECT_EQ(term.direction, views.x0_fake - gt.x);
  EXPECT_THROW(reg_term(views, gt.x.topRows(3)), ConfigError);

  // A small step against the surrogate gradient moves x0 towards the fixed target.
  const Matrix target = out.x0 - term.direction;
  ParamVector g = generator_backward(s, input, out, term.grad_x0);
  ParamVector moved = s.generator();
  for (std::size_t i = 0; i < moved.size(); ++i) moved.values()[i] -= 1e-3 * g.values()[i];
  s.set_generator(moved);
  const Matrix after = run_generator(s, input, false).x0;
  EXPECT_LT((after - target).squaredNorm(), (out.x0 - target).squaredNorm());
}

TEST(DiffusionBranch, ZeroNetLossIsDimension) {
  DistillConfig c = small_config();
  Rng rng(8);
  const MlpNet net = small_net();
  DistillState s(net, net.make_params("teacher/"), c, rng);
  const std::size_t n = 20000;
  std::vector<double> t(n);
  for (auto& v : t) v = 1000.0 * rng.uniform();
  const auto term = diffusion_branch_term(s, Matrix::Zero(n, 2), nullptr, t, rng.normal_matrix(n, 2));
  EXPECT_NEAR(term.loss, 2.0, 0.06);  // chi-squared(2) mean, 3 standard errors
}

TEST(DiffusionBranch, GradientReachesBranchOnly) {
  auto s = make_state(small_config());
  Rng rng(9);
  randomize_branch(s, rng, 0.3);
  const auto term = diffusion_branch_term(s, rng.normal_matrix(16, 2), nullptr, fixed_t(16),
                                          rng.normal_matrix(16, 2));
  EXPECT_TRUE(term.grad.same_layout(s.branch().factors()));
  EXPECT_GT(term.grad.norm(), 0.0);
}

TEST(Hinge, Examples) {
  Vector one(1), minus(1);
  one << 2.0;
  minus << -2.0;
  auto h = hinge_discriminator_loss(one, minus);
  EXPECT_EQ(h.loss, 0.0);
  EXPECT_EQ(h.grad_real(0), 0.0);
  EXPECT_EQ(h.grad_fake(0), 0.0);

  h = hinge_discriminator_loss(Vector::Zero(4), Vector::Zero(4));
  EXPECT_DOUBLE_EQ(h.loss, 2.0);
  EXPECT_DOUBLE_EQ(h.grad_real(0), -0.25);
  EXPECT_DOUBLE_EQ(h.grad_fake(0), 0.25);

  Vector kink_real(1), kink_fake(1);
  kink_real << 1.0;
  kink_fake << -1.0;
  h = hinge_discriminator_loss(kink_real, kink_fake);
  EXPECT_EQ(h.loss, 0.0);
  EXPECT_EQ(h.grad_real(0), 0.0);
  EXPECT_EQ(h.grad_fake(0), 0.0);
}

TEST(Adversarial, ZeroDiscriminatorGivesZeroGeneratorLoss) {
  auto s = make_state(small_config());
  s.disc() = s.disc().zeros_like();
  Rng rng(10);
  const auto term = generator_adversarial_term(s, rng.normal_matrix(16, 2), nullptr, fixed_t(16),
                                               rng.normal_matrix(16, 2));
  EXPECT_EQ(term.loss, 0.0);
  const auto dis = discriminator_term(s, rng.normal_matrix(16, 2), rng.normal_matrix(16, 2), nullptr,
                                      fixed_t(16), rng.normal_matrix(16, 2), rng.normal_matrix(16, 2));
  EXPECT_DOUBLE_EQ(dis.loss, 2.0);
}

TEST(PairRegression, Gradient) {
  Matrix x(2, 2), y(2, 2);
  x << 1, 2, 3, 4;
  y << 1, 1, 1, 1;
  const auto term = pair_regression_term(x, y);
  EXPECT_DOUBLE_EQ(term.loss, (1.0 + 4.0 + 9.0) / 2.0);
  EXPECT_EQ(term.grad_x0, (x - y));
}

TEST(TrainStep, UpdateRatioAndFrozenTeacher) {
  auto c = small_config();
  c.critic_updates = 5;
  auto s = make_state(c);
  const auto teacher_sum = s.teacher().checksum();
  const auto ds = gm8();
  Rng rng(11);
  for (int i = 0; i < 7; ++i) {
    train_step(s, ds, rng);
  }
  EXPECT_EQ(s.generator_updates, 7u);
  EXPECT_EQ(s.critic_updates, 35u);
  EXPECT_EQ(s.generator_opt().steps(), 7u);
  EXPECT_EQ(s.branch_opt().steps(), 35u);
  EXPECT_EQ(s.disc_opt().steps(), 35u);
  EXPECT_EQ(s.teacher().checksum(), teacher_sum);
  EXPECT_NO_THROW(s.verify_teacher_frozen());
}

TEST(TrainStep, ZeroWeightsLeaveGeneratorUnchanged) {
  auto c = small_config();
  c.weights.dmd = 0.0;
  c.weights.gen = 0.0;
  c.weights.reg = 0.0;
  c.weights.reg_enabled = false;
  auto s = make_state(c);
  const auto before = s.generator().checksum();
  const auto branch_before = s.branch().factors().checksum();
  const auto ds = gm8();
  Rng rng(12);
  for (int i = 0; i < 3; ++i) train_step(s, ds, rng);
  EXPECT_EQ(s.generator().checksum(), before);
  EXPECT_NE(s.branch().factors().checksum(), branch_before);
}

TEST(TrainStep, RegGateFollowsDiffusionHistory) {
  auto c = small_config();
  c.weights.reg_enabled = true;
  auto s = make_state(c);
  const auto ds = gm8();
  Rng rng(13);
  EXPECT_TRUE(train_step(s, ds, rng).reg_active);
  s.diffusion_history.assign({1.0, 1.0, 1.0, 10.0});
  const auto m = train_step(s, ds, rng);
  EXPECT_FALSE(m.reg_active);
  EXPECT_EQ(m.l_reg, 0.0);
  EXPECT_LE(s.diffusion_history.size(), c.reg_window);
}

TEST(TrainStep, Deterministic) {
  const auto ds = gm8();
  std::vector<std::string> rows[2];
  std::uint64_t sums[2];
  for (int r = 0; r < 2; ++r) {
    auto s = make_state(small_config(), 17);
    Rng rng(18);
    for (int i = 0; i < 50; ++i) {
      rows[r].push_back(metrics_csv_row(train_step(s, ds, rng)));
    }
    sums[r] = s.generator().checksum() ^ s.branch().factors().checksum() ^ s.disc().checksum();
  }
  EXPECT_EQ(rows[0], rows[1]);
  EXPECT_EQ(sums[0], sums[1]);
}

TEST(TrainStep, ReportsFiniteTelemetry) {
  auto s = make_state(small_config());
  const auto ds = gm8();
  Rng rng(19);
  const auto m = train_step(s, ds, rng);
  for (double v : {m.l_dmd, m.l_diff, m.l_dis, m.l_gen, m.grad_norm_phi, m.grad_norm_branch})
    EXPECT_TRUE(std::isfinite(v));
  const auto row = metrics_csv_row(m);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','),
            std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','));
  EXPECT_EQ(row.back(), ',');  // no snapshots on this row
}

TEST(Curriculum, EndpointsMidpointAndMonotone) {
  const CurriculumSchedule c;
  EXPECT_EQ(c.at(0), std::make_pair(1.0, 0.25));
  EXPECT_EQ(c.at(1000), std::make_pair(0.25, 1.0));
  EXPECT_EQ(c.at(5000), std::make_pair(0.25, 1.0));
  const auto mid = c.at(500);
  EXPECT_DOUBLE_EQ(mid.first, 0.625);
  EXPECT_DOUBLE_EQ(mid.second, 0.625);
  for (std::size_t i = 1; i <= 1000; ++i) {
    EXPECT_LE(c.at(i).first, c.at(i - 1).first);
    EXPECT_GE(c.at(i).second, c.at(i - 1).second);
  }
}

TEST(OneStepCurriculum, TracesWeightsAndRequiresSingleStep) {
  auto c = small_config();
  c.schedule = TimestepSchedule({1000.0});
  auto s = make_state(c);
  const PairTeacher student{s.generator(), TimestepSchedule::four_step(), Renoise::ReuseInitial};
  CurriculumSchedule cur;
  cur.ramp = 4;
  const auto ds = gm8();
  Rng rng(20);
  const auto trace = one_step_curriculum(s, student, cur, 6, ds, rng);
  ASSERT_EQ(trace.size(), 6u);
  EXPECT_EQ(trace.front().w_distill, 1.0);
  EXPECT_EQ(trace.front().w_dmd, 0.25);
  EXPECT_EQ(trace.back().w_distill, 0.25);
  EXPECT_EQ(trace.back().w_dmd, 1.0);
  for (const auto& p : trace) EXPECT_TRUE(std::isfinite(p.l_distill));

  auto four = make_state(small_config());
  EXPECT_THROW(one_step_curriculum(four, student, cur, 1, ds, rng), ConfigError);
}

TEST(Prop1, ScaleLawOverGrid) {
  for (double as : {0.5, 1.0, 2.0}) {
    for (double f : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9}) {
      const double aw = f * as;
      const auto r = verify_prop1(Prop1Problem{}, aw, as);
      const double s = (as - aw) / as;
      EXPECT_NEAR(r.scale_factor, s * s, 1e-15);
      EXPECT_LE(r.max_abs_deviation, 1e-10) << aw << " " << as;
      EXPECT_LE(r.realization_error, 1e-8);
      EXPECT_GT(r.rhs.norm(), 0.0);
    }
  }
  EXPECT_DOUBLE_EQ(verify_prop1(Prop1Problem{}, 0.25, 1.0).scale_factor, 0.5625);
}

TEST(Prop1, DeepModeRejected) {
  Prop1Problem p;
  p.mode = LoraMode::Deep;
  EXPECT_THROW(verify_prop1(p, 0.25, 1.0), ConfigError);
  EXPECT_THROW(verify_prop1(Prop1Problem{}, 0.5, 0.25), ConfigError);
}

TEST(Gradcheck, AllLossesPass) {
  const auto errors = gradcheck_suite(60);
  for (const char* name : {"l_flow", "l_diffusion", "l_dmd", "l_reg", "l_gen", "l_dis"}) {
    ASSERT_TRUE(errors.count(name)) << name;
    EXPECT_LE(errors.at(name), 1e-5) << name;
  }
}
