#include "w2sd/discriminator.hpp"

#include <cmath>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

DiscriminatorHead::DiscriminatorHead(std::size_t feature_dim, std::size_t hidden, std::size_t tap)
    : feature_dim_(feature_dim), hidden_(hidden), tap_(tap) {
  if (feature_dim == 0 || hidden == 0)
    throw ConfigError("distill.disc_hidden", "discriminator widths must be positive");
}

ParamVector DiscriminatorHead::init_params(Rng& rng) const {
  ParamVector p;
  p.add("disc/fc0.weight", {hidden_, feature_dim_});
  p.add("disc/fc0.bias", {hidden_});
  p.add("disc/fc1.weight", {1, hidden_});
  p.add("disc/fc1.bias", {1});
  for (std::size_t layer : {0u, 2u}) {
    auto w = p.matrix(layer);
    const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

Vector DiscriminatorHead::forward(const ParamVector& params, const Matrix& features,
                                  Cache* cache) const {
  if (static_cast<std::size_t>(features.cols()) != feature_dim_)
    throw ConfigError("discriminator", "feature width mismatch");
  const auto w0 = params.matrix(0);
  const auto w1 = params.matrix(2);
  const auto b0 = params.tensor("disc/fc0.bias");
  const double b1 = params.tensor("disc/fc1.bias")[0];
  Matrix pre = features * w0.transpose();
  pre.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b0.data(), static_cast<Eigen::Index>(b0.size()));
  Matrix act = pre.unaryExpr([](double v) { return v * sigmoid(v); });
  Vector scores = (act * w1.transpose()).col(0).array() + b1;
  if (cache) *cache = Cache{features, std::move(pre), std::move(act)};
  return scores;
}

DiscriminatorHead::Gradients DiscriminatorHead::backward(const ParamVector& params,
                                                         const Cache& cache, const Vector& upstream,
                                                         bool feature_grad) const {
  if (cache.act.rows() == 0) throw UsageError("discriminator backward without forward");
  if (upstream.size() != cache.act.rows()) throw ConfigError("discriminator", "upstream size mismatch");
  Gradients g;
  g.params = params.zeros_like();
  const auto w1 = params.matrix(2);
  g.params.matrix(2) = upstream.transpose() * cache.act;
  g.params.tensor("disc/fc1.bias")[0] = upstream.sum();
  const Matrix d_act = upstream * w1;  // n x hidden
  const Matrix d_pre = d_act.cwiseProduct(cache.pre.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  }));
  g.params.matrix(0) = d_pre.transpose() * cache.features;
  auto db0 = g.params.tensor("disc/fc0.bias");
  Eigen::Map<Eigen::RowVectorXd>(db0.data(), static_cast<Eigen::Index>(db0.size())) = d_pre.colwise().sum();
  if (feature_grad) g.features = d_pre * params.matrix(0);
  return g;
}

HingeLoss hinge_discriminator_loss(const Vector& real_scores, const Vector& fake_scores) {
  if (real_scores.size() == 0 || fake_scores.size() == 0)
    throw ConfigError("hinge", "empty score batch");
  HingeLoss h;
  const double nr = static_cast<double>(real_scores.size());
  const double nf = static_cast<double>(fake_scores.size());
  h.grad_real = Vector::Zero(real_scores.size());
  h.grad_fake = Vector::Zero(fake_scores.size());
  for (Eigen::Index i = 0; i < fake_scores.size(); ++i) {
    const double arg = 1.0 + fake_scores(i);
    if (arg > 0.0) {
      h.loss += arg / nf;
      h.grad_fake(i) = 1.0 / nf;
    }
  }
  for (Eigen::Index i = 0; i < real_scores.size(); ++i) {
    const double arg = 1.0 - real_scores(i);
    if (arg > 0.0) {
      h.loss += arg / nr;
      h.grad_real(i) = -1.0 / nr;
    }
  }
  return h;
}

}  // namespace w2sd
