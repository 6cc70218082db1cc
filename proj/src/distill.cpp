#include "w2sd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

namespace {

void check_finite(double value, const char* name, long iteration, const std::string& context) {
  if (!std::isfinite(value)) throw NonFiniteError(iteration, name, context);
}

void check_finite(const Matrix& m, const char* name, long iteration, const std::string& context) {
  if (!m.allFinite()) throw NonFiniteError(iteration, name, context);
}

Matrix scale_rows(const Matrix& m, std::span<const double> t, double (*f)(double)) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) *= f(t[static_cast<std::size_t>(i)]);
  return out;
}

double neg_sigma(double t) { return -sigma_of(t); }
double one_minus_sigma(double t) { return 1.0 - sigma_of(t); }

TimestepSampler logit_sampler(const DistillConfig& cfg) {
  return TimestepSampler::logit_normal(cfg.logit_mean, cfg.logit_std);
}

double median(std::deque<double> values) {
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void LossWeights::validate() const {
  for (auto [name, v] : {std::pair{"loss.w_dmd", dmd}, std::pair{"loss.w_reg", reg},
                         std::pair{"loss.w_gen", gen}, std::pair{"loss.w_distill", distill}}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(name, "must be finite and nonnegative");
  }
  if (!reg_enabled && reg != 0.0)
    throw ConfigError("loss.w_reg", "must be 0 when the regularizer is disabled");
}

std::pair<double, double> CurriculumSchedule::at(std::size_t iteration) const {
  const double frac =
      ramp == 0 ? 1.0 : std::min(1.0, static_cast<double>(iteration) / static_cast<double>(ramp));
  if (frac >= 1.0) return {distill_end, dmd_end};
  return {distill_start + (distill_end - distill_start) * frac,
          dmd_start + (dmd_end - dmd_start) * frac};
}

void DistillConfig::validate() const {
  scales.validate();
  weights.validate();
  if (batch_size == 0) throw ConfigError("distill.batch_size", "must be positive");
  if (critic_updates == 0) throw ConfigError("distill.critic_updates", "must be positive");
  if (!(logit_std > 0.0)) throw ConfigError("sampler.logit_std", "must be positive");
  if (!(reg_eta_factor > 0.0)) throw ConfigError("distill.reg_eta_factor", "must be positive");
  if (reg_window == 0) throw ConfigError("distill.reg_window", "must be positive");
}

// ---------------------------------------------------------------------------
// state

DistillState::DistillState(MlpNet net, ParamVector teacher, DistillConfig config, Rng& init_rng)
    : net_(std::move(net)),
      config_(std::move(config)),
      teacher_(std::move(teacher)),
      teacher_checksum_(teacher_.checksum()),
      generator_(net_.make_params("gen/")),
      branch_(net_, config_.lora_rank, config_.lora_mode),
      head_(net_.config().hidden.at(std::min(config_.disc_tap, net_.config().hidden.size() - 1)),
            config_.disc_hidden, config_.disc_tap) {
  config_.validate();
  if (config_.disc_tap >= net_.config().hidden.size())
    throw ConfigError("distill.disc_tap", "beyond the backbone's hidden layers");
  if (teacher_.size() != generator_.size())
    throw ConfigError("teacher", "pretrained parameters do not match the network");
  std::copy(teacher_.values().begin(), teacher_.values().end(), generator_.values().begin());
  branch_.init(init_rng, config_.lora_init_std);
  disc_ = head_.init_params(init_rng);
  generator_opt_ = AdamState(generator_.size(), config_.generator_opt);
  branch_opt_ = AdamState(branch_.factors().size(), config_.critic_opt);
  disc_opt_ = AdamState(disc_.size(), config_.critic_opt);
}

void DistillState::set_generator(const ParamVector& params) {
  if (params.size() != generator_.size())
    throw ConfigError("generator", "parameter count does not match the network");
  std::copy(params.values().begin(), params.values().end(), generator_.values().begin());
  generator_opt_ = AdamState(generator_.size(), config_.generator_opt);
}

void DistillState::verify_teacher_frozen() const {
  if (teacher_.checksum() != teacher_checksum_)
    throw UsageError("frozen pretrained parameters changed during distillation");
}

// ---------------------------------------------------------------------------
// generator plumbing

GeneratorInput pure_noise_input(const Matrix& eps, const Matrix& cond) {
  GeneratorInput in;
  in.x_t = eps;
  in.eps = eps;
  in.t.assign(static_cast<std::size_t>(eps.rows()), 1000.0);
  in.cond = cond;
  return in;
}

GeneratorInput noised_input(const DistillState& state, const DataBatch& gt, const Matrix& eps,
                            Rng& rng) {
  GeneratorInput in;
  in.t = TimestepSampler::uniform_discrete(state.config().schedule)
             .sample_batch(static_cast<std::size_t>(gt.x.rows()), rng);
  in.x_t = add_noise(gt.x, eps, in.t);
  in.cond = gt.cond;
  in.eps = eps;
  return in;
}

GeneratorInput make_generator_input(const DistillState& state, const DataBatch& gt,
                                    const Matrix& eps, Rng& rng) {
  if (state.config().generator_input == GeneratorInputMode::PureNoise)
    return pure_noise_input(eps, gt.cond);
  return noised_input(state, gt, eps, rng);
}

GeneratorOutput run_generator(const DistillState& state, const GeneratorInput& input,
                              bool keep_cache) {
  GeneratorOutput out;
  const Matrix v = state.net().forward(state.generator(), input.x_t, input.t, input.cond_ptr(),
                                       keep_cache ? &out.cache : nullptr);
  out.x0 = denoise_prediction(input.x_t, v, input.t);
  return out;
}

ParamVector generator_backward(const DistillState& state, const GeneratorInput& input,
                               const GeneratorOutput& output, const Matrix& grad_x0) {
  // x0 = x_t - sigma * G(x_t, t)
  const Matrix upstream = scale_rows(grad_x0, input.t, neg_sigma);
  return state.net().backward(state.generator(), output.cache, upstream).params;
}

// ---------------------------------------------------------------------------
// distribution matching terms

ViewPredictions view_predictions(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                 std::span<const double> t, const Matrix& noise) {
  const auto& scales = state.config().scales;
  ViewPredictions vp;
  vp.t.assign(t.begin(), t.end());
  vp.x_t = add_noise(x0, noise, t);
  const Matrix v_real = eval_view(state.net(), scales.alpha_weak, state.teacher(), state.branch(),
                                  vp.x_t, t, cond);
  const Matrix v_fake = eval_view(state.net(), scales.alpha_strong, state.teacher(),
                                  state.branch(), vp.x_t, t, cond);
  vp.x0_real = denoise_prediction(vp.x_t, v_real, t);
  vp.x0_fake = denoise_prediction(vp.x_t, v_fake, t);
  return vp;
}

ViewPredictions view_predictions(const DistillState& state, const GeneratorInput& input,
                                 const Matrix& x0, Rng& rng) {
  const auto n = static_cast<std::size_t>(x0.rows());
  const auto& cfg = state.config();
  const Matrix* cond = input.cond_ptr();
  if (cfg.dmd_timestep == DmdTimestepMode::GeneratorStep)
    return view_predictions(state, x0, cond, input.t, input.eps);
  const auto t = cfg.dmd_timestep == DmdTimestepMode::Schedule
                     ? TimestepSampler::uniform_discrete(cfg.schedule).sample_batch(n, rng)
                     : logit_sampler(cfg).sample_batch(n, rng);
  const Matrix noise = rng.normal_matrix(x0.rows(), x0.cols());
  return view_predictions(state, x0, cond, t, noise);
}

namespace {

X0Term surrogate(Matrix d) {
  X0Term term;
  const double n = static_cast<double>(d.rows());
  term.loss = 0.5 * d.squaredNorm() / n;
  term.grad_x0 = d / n;
  term.direction = std::move(d);
  return term;
}

}  // namespace

X0Term dmd_term(const DistillState& state, const Matrix& x0, const ViewPredictions& views) {
  Matrix d = views.x0_fake - views.x0_real;
  if (state.weights().normalizer_enabled) {
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const double scale = (views.x0_real.row(i) - x0.row(i)).cwiseAbs().mean();
      d.row(i) /= std::max(scale, 1e-12);
    }
  }
  check_finite(d, "l_dmd", state.iteration,
               "distribution-matching direction diverged (generator output norm " +
                   std::to_string(x0.norm()) + ")");
  return surrogate(std::move(d));
}

X0Term reg_term(const ViewPredictions& views, const Matrix& x_gt) {
  if (x_gt.rows() != views.x0_fake.rows() || x_gt.cols() != views.x0_fake.cols())
    throw ConfigError("x_gt", "ground truth does not match the generator batch");
  return surrogate(views.x0_fake - x_gt);
}

Matrix discriminator_features(const DistillState& state, const Matrix& x, const Matrix* cond,
                              std::span<const double> t, const Matrix& noise,
                              ForwardCache* cache) {
  const std::size_t tap = state.head().tap();
  if (state.config().disc_noised)
    return state.net().forward_features(state.teacher(), add_noise(x, noise, t), t, cond, tap,
                                        cache);
  const std::vector<double> zeros(static_cast<std::size_t>(x.rows()), 0.0);
  return state.net().forward_features(state.teacher(), x, zeros, cond, tap, cache);
}

X0Term generator_adversarial_term(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                  std::span<const double> t, const Matrix& noise) {
  ForwardCache cache;
  const Matrix features = discriminator_features(state, x0, cond, t, noise, &cache);
  DiscriminatorHead::Cache head_cache;
  const Vector scores = state.head().forward(state.disc(), features, &head_cache);
  const double n = static_cast<double>(x0.rows());
  X0Term term;
  term.loss = -scores.mean();
  const Vector upstream = Vector::Constant(scores.size(), -1.0 / n);
  const auto head_grad = state.head().backward(state.disc(), head_cache, upstream, true);
  BackwardOptions opts;
  opts.param_grad = false;
  opts.input_grad = true;
  Matrix dx = state.net().backward(state.teacher(), cache, head_grad.features, opts).input;
  term.grad_x0 = state.config().disc_noised ? scale_rows(dx, t, one_minus_sigma) : std::move(dx);
  term.direction = term.grad_x0 * n;
  return term;
}

X0Term pair_regression_term(const Matrix& x0, const Matrix& target) {
  if (x0.rows() != target.rows() || x0.cols() != target.cols())
    throw ConfigError("pairs", "pair targets do not match the generator batch");
  const double n = static_cast<double>(x0.rows());
  X0Term term;
  const Matrix diff = x0 - target;
  term.loss = diff.squaredNorm() / n;
  term.grad_x0 = (2.0 / n) * diff;
  term.direction = 2.0 * diff;
  return term;
}

GeneratorLoss dmd_generator_loss(const DistillState& state, const GeneratorInput& input, Rng& rng) {
  const auto out = run_generator(state, input, true);
  const auto views = view_predictions(state, input, out.x0, rng);
  auto term = dmd_term(state, out.x0, views);
  return {term.loss, generator_backward(state, input, out, term.grad_x0), std::move(term.direction)};
}

GeneratorLoss reg_generator_loss(const DistillState& state, const GeneratorInput& input,
                                 const Matrix& x_gt, Rng& rng) {
  if (!state.weights().reg_enabled)
    throw ConfigError("loss.reg_enabled", "regularizer requested while disabled");
  const auto out = run_generator(state, input, true);
  const auto views = view_predictions(state, input, out.x0, rng);
  auto term = reg_term(views, x_gt);
  return {term.loss, generator_backward(state, input, out, term.grad_x0), std::move(term.direction)};
}

// ---------------------------------------------------------------------------
// critic terms

BranchLoss diffusion_branch_term(const DistillState& state, const Matrix& x0, const Matrix* cond,
                                 std::span<const double> t, const Matrix& noise) {
  const Matrix x_t = add_noise(x0, noise, t);
  ForwardCache cache;
  const Matrix v = eval_view(state.net(), state.config().scales.alpha_strong, state.teacher(),
                             state.branch(), x_t, t, cond, &cache);
  const Matrix diff = v - velocity_target(x0, noise);
  const double n = static_cast<double>(x0.rows());
  BranchLoss out;
  out.loss = diff.squaredNorm() / n;
  out.grad = branch_gradient(state.net(), state.teacher(), cache, (2.0 / n) * diff);
  return out;
}

BranchLoss diffusion_branch_loss(const DistillState& state, const GeneratorInput& input, Rng& rng) {
  const Matrix x0 = run_generator(state, input, false).x0;
  const auto t = logit_sampler(state.config()).sample_batch(static_cast<std::size_t>(x0.rows()), rng);
  const Matrix noise = rng.normal_matrix(x0.rows(), x0.cols());
  return diffusion_branch_term(state, x0, input.cond_ptr(), t, noise);
}

DiscriminatorLoss discriminator_term(const DistillState& state, const Matrix& x0_fake,
                                     const Matrix& x_gt, const Matrix* cond,
                                     std::span<const double> t, const Matrix& noise_fake,
                                     const Matrix& noise_real) {
  const Matrix f_fake = discriminator_features(state, x0_fake, cond, t, noise_fake);
  const Matrix f_real = discriminator_features(state, x_gt, cond, t, noise_real);
  DiscriminatorHead::Cache c_fake, c_real;
  const Vector s_fake = state.head().forward(state.disc(), f_fake, &c_fake);
  const Vector s_real = state.head().forward(state.disc(), f_real, &c_real);
  DiscriminatorLoss out;
  out.hinge = hinge_discriminator_loss(s_real, s_fake);
  out.loss = out.hinge.loss;
  out.grad = state.head().backward(state.disc(), c_fake, out.hinge.grad_fake, false).params;
  out.grad.axpy(1.0, state.head().backward(state.disc(), c_real, out.hinge.grad_real, false).params);
  return out;
}

AdversarialLosses adversarial_losses(const DistillState& state, const GeneratorInput& input,
                                     const DataBatch& gt, Rng& rng) {
  const auto n = static_cast<std::size_t>(gt.x.rows());
  const auto sampler = logit_sampler(state.config());
  const auto out = run_generator(state, input, true);
  AdversarialLosses res;
  {
    const auto t = sampler.sample_batch(n, rng);
    const Matrix nf = rng.normal_matrix(gt.x.rows(), gt.x.cols());
    const Matrix nr = rng.normal_matrix(gt.x.rows(), gt.x.cols());
    auto dis = discriminator_term(state, out.x0, gt.x, input.cond_ptr(), t, nf, nr);
    res.l_dis = dis.loss;
    res.dis_grad = std::move(dis.grad);
  }
  {
    const auto t = sampler.sample_batch(n, rng);
    const Matrix noise = rng.normal_matrix(gt.x.rows(), gt.x.cols());
    const auto gen = generator_adversarial_term(state, out.x0, input.cond_ptr(), t, noise);
    res.l_gen = gen.loss;
    res.gen_grad = generator_backward(state, input, out, gen.grad_x0);
  }
  return res;
}

// ---------------------------------------------------------------------------
// training loop

std::string metrics_csv_row(const RunMetrics& r) {
  char buf[512];
  const auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[32];
    std::snprintf(b, sizeof(b), "%.10g", *v);
    return std::string(b);
  };
  std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,", r.iter, r.l_dmd,
                r.l_reg, r.l_diff, r.l_dis, r.l_gen, r.grad_norm_phi, r.grad_norm_branch);
  return std::string(buf) + opt(r.w2_snapshot) + "," + opt(r.mmd_snapshot);
}

RunMetrics train_step(DistillState& state, const Dataset& dataset, Rng& rng) {
  state.verify_teacher_frozen();
  const auto& cfg = state.config();
  const auto& w = state.weights();
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  const auto dim = static_cast<Eigen::Index>(dataset.dim());
  const auto sampler = logit_sampler(cfg);
  RunMetrics m;
  m.iter = state.iteration;

#ifndef NDEBUG
  const auto critic_sum_before = state.branch().factors().checksum() ^ state.disc().checksum();
#endif

  // Generator phase.
  {
    const auto gt = dataset.sample_batch(cfg.batch_size, rng);
    const Matrix eps = rng.normal_matrix(batch, dim);
    const auto input = make_generator_input(state, gt, eps, rng);
    const auto out = run_generator(state, input, true);
    const auto views = view_predictions(state, input, out.x0, rng);
    Matrix grad_x0 = Matrix::Zero(batch, dim);

    const auto dmd = dmd_term(state, out.x0, views);
    m.l_dmd = dmd.loss;
    grad_x0 += w.dmd * dmd.grad_x0;

    if (w.reg_enabled) {
      const auto& hist = state.diffusion_history;
      m.reg_active = hist.size() < 2 || hist.back() <= cfg.reg_eta_factor * median(hist);
    }
    if (m.reg_active) {
      const auto reg = reg_term(views, gt.x);
      m.l_reg = reg.loss;
      grad_x0 += w.reg_weight() * reg.grad_x0;
    }

    const auto t_adv = sampler.sample_batch(cfg.batch_size, rng);
    const Matrix n_adv = rng.normal_matrix(batch, dim);
    const auto adv = generator_adversarial_term(state, out.x0, input.cond_ptr(), t_adv, n_adv);
    m.l_gen = adv.loss;
    grad_x0 += w.gen * adv.grad_x0;

    if (state.pair_teacher) {
      const auto& pt = *state.pair_teacher;
      const Matrix target = few_step_sample(bind_net(state.net(), pt.params), pt.schedule, eps,
                                            rng, input.cond_ptr(), pt.renoise);
      const auto pair = pair_regression_term(out.x0, target);
      m.l_distill = pair.loss;
      grad_x0 += w.distill * pair.grad_x0;
    }

    const ParamVector grad = generator_backward(state, input, out, grad_x0);
    m.grad_norm_phi = grad.norm();
    const std::string ctx = "grad_norm_phi=" + std::to_string(m.grad_norm_phi);
    check_finite(m.l_dmd, "l_dmd", m.iter, ctx);
    check_finite(m.l_reg, "l_reg", m.iter, ctx);
    check_finite(m.l_gen, "l_gen", m.iter, ctx);
    check_finite(m.l_distill, "l_distill", m.iter, ctx);
    state.generator_opt().step(state.generator(), grad, "generator", m.iter);
    ++state.generator_updates;
  }

#ifndef NDEBUG
  if ((state.branch().factors().checksum() ^ state.disc().checksum()) != critic_sum_before)
    throw UsageError("generator phase modified branch or discriminator parameters");
  const auto generator_sum_before = state.generator().checksum();
#endif

  // Branch / discriminator phase.
  double diff_sum = 0.0, dis_sum = 0.0, branch_norm_sum = 0.0;
  for (std::size_t k = 0; k < cfg.critic_updates; ++k) {
    const auto gt = dataset.sample_batch(cfg.batch_size, rng);
    const Matrix eps = rng.normal_matrix(batch, dim);
    const auto input = make_generator_input(state, gt, eps, rng);
    const Matrix x0 = run_generator(state, input, false).x0;

    const auto t = sampler.sample_batch(cfg.batch_size, rng);
    const Matrix noise = rng.normal_matrix(batch, dim);
    const auto diff = diffusion_branch_term(state, x0, input.cond_ptr(), t, noise);

    const auto t_dis = sampler.sample_batch(cfg.batch_size, rng);
    const Matrix n_fake = rng.normal_matrix(batch, dim);
    const Matrix n_real = rng.normal_matrix(batch, dim);
    const auto dis = discriminator_term(state, x0, gt.x, input.cond_ptr(), t_dis, n_fake, n_real);

    const double gnorm = diff.grad.norm();
    const std::string ctx = "grad_norm_branch=" + std::to_string(gnorm) +
                            " grad_norm_disc=" + std::to_string(dis.grad.norm());
    check_finite(diff.loss, "l_diff", m.iter, ctx);
    check_finite(dis.loss, "l_dis", m.iter, ctx);
    state.branch_opt().step(state.branch().factors(), diff.grad, "l_diff", m.iter);
    state.disc_opt().step(state.disc(), dis.grad, "l_dis", m.iter);
    ++state.critic_updates;
    diff_sum += diff.loss;
    dis_sum += dis.loss;
    branch_norm_sum += gnorm;
  }
  const double reps = static_cast<double>(cfg.critic_updates);
  m.l_diff = diff_sum / reps;
  m.l_dis = dis_sum / reps;
  m.grad_norm_branch = branch_norm_sum / reps;

#ifndef NDEBUG
  if (state.generator().checksum() != generator_sum_before)
    throw UsageError("branch phase modified generator parameters");
#endif

  state.diffusion_history.push_back(m.l_diff);
  while (state.diffusion_history.size() > cfg.reg_window) state.diffusion_history.pop_front();
  ++state.iteration;
  return m;
}

std::vector<CurriculumPoint> one_step_curriculum(DistillState& state, const PairTeacher& student,
                                                 const CurriculumSchedule& curriculum,
                                                 std::size_t iterations, const Dataset& dataset,
                                                 Rng& rng, const StepObserver& observe) {
  if (student.params.empty())
    throw ConfigError("onestep.student_checkpoint", "missing few-step generator");
  if (state.config().schedule.size() != 1)
    throw ConfigError("schedule", "one-step training needs the single-step schedule {1000}");
  state.set_generator(student.params);
  state.pair_teacher = student;
  std::vector<CurriculumPoint> trace;
  trace.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto [w_distill, w_dmd] = curriculum.at(i);
    state.weights().distill = w_distill;
    state.weights().dmd = w_dmd;
    auto row = train_step(state, dataset, rng);
    trace.push_back({i, w_distill, w_dmd, row.l_distill});
    if (observe) observe(state, row);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// closed-form verification

Prop1Report verify_prop1(const Prop1Problem& problem, double alpha_weak, double alpha_strong) {
  ViewScales{alpha_weak, alpha_strong}.validate();
  if (problem.mode != LoraMode::Output)
    throw ConfigError("lora.mode", "the scale law is exact only with an output-layer branch");
  if (problem.batch > problem.hidden)
    throw ConfigError("prop1", "batch must not exceed the hidden width");

  Rng rng(problem.seed);
  const MlpNet net(MlpConfig{2, 0, {problem.hidden, problem.hidden}, Activation::SiLU});
  const ParamVector teacher = net.init_params(rng, "teacher/");
  const ParamVector generator = net.init_params(rng, "gen/");
  const auto n = static_cast<Eigen::Index>(problem.batch);

  const Matrix eps = rng.normal_matrix(n, 2);
  const Matrix eps2 = rng.normal_matrix(n, 2);
  std::vector<double> t(problem.batch);
  for (auto& ti : t) ti = 100.0 + 900.0 * rng.uniform();
  const std::vector<double> t_gen(problem.batch, 1000.0);

  // One-step generator output G = eps - sigma(1000) * net(eps, 1000).
  ForwardCache gen_cache;
  const Matrix g_out = denoise_prediction(eps, net.forward(generator, eps, t_gen, nullptr, &gen_cache), t_gen);
  const Matrix x_t = add_noise(g_out, eps2, t);

  LoraBranch branch(net, 2, LoraMode::Output);
  ForwardCache pre_cache;
  const Matrix v_pre = eval_view(net, 0.0, teacher, branch, x_t, t, nullptr, &pre_cache);
  const Matrix residual = (eps2 - v_pre) - g_out;  // G* - G
  const Matrix zeta = optimal_branch_oracle(residual, alpha_strong);

  // Realize zeta exactly with the output-layer factors: A = I, B solves H B^T = zeta.
  const std::size_t last = net.num_linear() - 1;
  const Matrix& hidden = pre_cache.inputs[last];
  const Matrix bt = hidden.completeOrthogonalDecomposition().solve(zeta);
  branch.factors().matrix(branch.a_index(last)) = Matrix::Identity(2, 2);
  branch.factors().matrix(branch.b_index(last)) = bt.transpose();

  const Matrix v_weak = eval_view(net, alpha_weak, teacher, branch, x_t, t, nullptr);
  const Matrix v_strong = eval_view(net, alpha_strong, teacher, branch, x_t, t, nullptr);

  Prop1Report rep;
  rep.alpha_weak = alpha_weak;
  rep.alpha_strong = alpha_strong;
  rep.realization_error = (v_strong - (eps2 - g_out)).cwiseAbs().maxCoeff();

  // Objective mean ||eps' - G - v_real(x_t)||^2 with G* held fixed and the
  // branch following G through the oracle: d(residual)/dG = -1 - alpha_weak * dzeta/dG.
  const Matrix ones = Matrix::Ones(n, 2);
  const Matrix dzeta = optimal_branch_oracle(-ones, alpha_strong);
  const Matrix jac_w2s = -ones - alpha_weak * dzeta;
  const Matrix res_w2s = eps2 - g_out - v_weak;
  const Matrix res_van = eps2 - g_out - v_pre;
  const double scale = 2.0 / static_cast<double>(n);
  const Matrix up_w2s = scale * res_w2s.cwiseProduct(jac_w2s);
  const Matrix up_van = -scale * res_van;

  // G = eps - net(eps): upstream on the velocity is the negated upstream on G.
  rep.lhs = net.backward(generator, gen_cache, -up_w2s).params;
  rep.rhs = net.backward(generator, gen_cache, -up_van).params;
  const double s = (alpha_strong - alpha_weak) / alpha_strong;
  rep.scale_factor = s * s;
  for (std::size_t i = 0; i < rep.lhs.size(); ++i)
    rep.max_abs_deviation = std::max(
        rep.max_abs_deviation, std::abs(rep.lhs.values()[i] - rep.scale_factor * rep.rhs.values()[i]));
  return rep;
}

// ---------------------------------------------------------------------------
// finite-difference suite

std::map<std::string, double> gradcheck_suite(std::size_t probes, double h, std::uint64_t seed) {
  Rng rng(seed);
  const MlpNet net(MlpConfig{2, 0, {16, 16}, Activation::SiLU});
  const ParamVector teacher = net.init_params(rng, "teacher/");
  DistillConfig cfg;
  cfg.lora_mode = LoraMode::Deep;
  cfg.lora_rank = 2;
  cfg.disc_tap = 1;
  cfg.disc_hidden = 8;
  cfg.batch_size = 8;
  DistillState base(net, teacher, cfg, rng);
  // Move every trainable set away from its special initial point so no
  // gradient block is identically zero.
  for (double& v : base.generator().values()) v += 0.1 * rng.normal();
  for (double& v : base.branch().factors().values()) v = 0.3 * rng.normal();

  const Dataset data(DatasetSpec{});
  const auto gt = data.sample_batch(cfg.batch_size, rng);
  const Matrix eps = rng.normal_matrix(8, 2);
  const auto input = noised_input(base, gt, eps, rng);
  const auto out = run_generator(base, input, true);
  const double n = 8.0;
  std::vector<double> t(8);
  for (auto& ti : t) ti = 50.0 + 900.0 * rng.uniform();
  const Matrix noise = rng.normal_matrix(8, 2);
  const Matrix noise2 = rng.normal_matrix(8, 2);

  std::map<std::string, double> result;
  std::uint64_t probe_seed = seed * 100;

  {  // flow matching (teacher pretraining)
    const auto sampler = TimestepSampler::logit_normal();
    const auto loss_at = [&](const ParamVector& p) {
      Rng r(77);
      return flow_matching_loss(net, p, gt.x, nullptr, sampler, r);
    };
    const auto analytic = loss_at(teacher).grad;
    result["l_flow"] = grad_check([&](const ParamVector& p) { return loss_at(p).loss; }, analytic,
                                  teacher, probes, h, ++probe_seed);
  }
  {  // diffusion loss over branch factors
    auto probe = std::make_shared<DistillState>(base);
    const auto analytic = diffusion_branch_term(base, out.x0, nullptr, t, noise).grad;
    result["l_diffusion"] = grad_check(
        [&, probe](const ParamVector& p) {
          probe->branch().factors() = p;
          return diffusion_branch_term(*probe, out.x0, nullptr, t, noise).loss;
        },
        analytic, base.branch().factors(), probes, h, ++probe_seed);
  }
  const auto views = view_predictions(base, out.x0, nullptr, t, noise);
  const auto surrogate_check = [&](const X0Term& term) {
    auto probe = std::make_shared<DistillState>(base);
    const Matrix target = out.x0 - term.direction;
    const auto analytic = generator_backward(base, input, out, term.grad_x0);
    return grad_check(
        [&, probe, target](const ParamVector& p) {
          probe->generator() = p;
          const Matrix x0 = run_generator(*probe, input, false).x0;
          return 0.5 * (x0 - target).squaredNorm() / n;
        },
        analytic, base.generator(), probes, h, ++probe_seed);
  };
  result["l_dmd"] = surrogate_check(dmd_term(base, out.x0, views));
  result["l_reg"] = surrogate_check(reg_term(views, gt.x));
  {
    auto probe = std::make_shared<DistillState>(base);
    const auto term = generator_adversarial_term(base, out.x0, nullptr, t, noise);
    const auto analytic = generator_backward(base, input, out, term.grad_x0);
    result["l_gen"] = grad_check(
        [&, probe](const ParamVector& p) {
          probe->generator() = p;
          const Matrix x0 = run_generator(*probe, input, false).x0;
          return generator_adversarial_term(*probe, x0, nullptr, t, noise).loss;
        },
        analytic, base.generator(), probes, h, ++probe_seed);
  }
  {
    auto probe = std::make_shared<DistillState>(base);
    const auto analytic = discriminator_term(base, out.x0, gt.x, nullptr, t, noise, noise2).grad;
    result["l_dis"] = grad_check(
        [&, probe](const ParamVector& p) {
          probe->disc() = p;
          return discriminator_term(*probe, out.x0, gt.x, nullptr, t, noise, noise2).loss;
        },
        analytic, base.disc(), probes, h, ++probe_seed);
  }
  return result;
}

}  // namespace w2sd
