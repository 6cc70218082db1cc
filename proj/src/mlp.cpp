#include "w2sd/mlp.hpp"

#include <cmath>
#include <numbers>

#include "w2sd/errors.hpp"
#include "w2sd/lora.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix activate(const Matrix& z, Activation act) {
  if (act == Activation::Tanh) return z.array().tanh().matrix();
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix activation_grad(const Matrix& z, Activation act) {
  if (act == Activation::Tanh) return (1.0 - z.array().tanh().square()).matrix();
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

}  // namespace

Matrix time_embedding(std::span<const double> t) {
  Matrix emb(static_cast<Eigen::Index>(t.size()), kTimeEmbedDim);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double s = t[i] / 1000.0;
    for (std::size_t k = 0; k < kTimeEmbedDim / 2; ++k) {
      const double arg = std::numbers::pi * static_cast<double>(1u << k) * s;
      emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * k)) = std::sin(arg);
      emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 * k + 1)) = std::cos(arg);
    }
  }
  return emb;
}

MlpNet::MlpNet(MlpConfig config) : config_(std::move(config)) {
  if (config_.sample_dim == 0) throw ConfigError("net.sample_dim", "must be positive");
  for (auto w : config_.hidden)
    if (w == 0) throw ConfigError("net.hidden", "layer widths must be positive");
}

std::size_t MlpNet::input_dim() const {
  return config_.sample_dim + kTimeEmbedDim + config_.cond_dim;
}

std::size_t MlpNet::linear_in(std::size_t layer) const {
  return layer == 0 ? input_dim() : config_.hidden.at(layer - 1);
}

std::size_t MlpNet::linear_out(std::size_t layer) const {
  return layer + 1 == num_linear() ? config_.sample_dim : config_.hidden.at(layer);
}

ParamVector MlpNet::make_params(const std::string& prefix) const {
  ParamVector p;
  for (std::size_t i = 0; i < num_linear(); ++i) {
    const std::string base = prefix + "fc" + std::to_string(i);
    p.add(base + ".weight", {linear_out(i), linear_in(i)});
    p.add(base + ".bias", {linear_out(i)});
  }
  return p;
}

ParamVector MlpNet::init_params(Rng& rng, const std::string& prefix) const {
  ParamVector p = make_params(prefix);
  for (std::size_t i = 0; i < num_linear(); ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(linear_in(i)));
    auto w = p.matrix(2 * i);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

void MlpNet::check_params(const ParamVector& params) const {
  const auto& layout = params.layout();
  if (layout.size() != 2 * num_linear())
    throw ConfigError("params", "layout does not match network depth");
  for (std::size_t i = 0; i < num_linear(); ++i) {
    const auto& w = layout[2 * i];
    const auto& b = layout[2 * i + 1];
    if (w.shape != std::vector<std::size_t>{linear_out(i), linear_in(i)} ||
        b.shape != std::vector<std::size_t>{linear_out(i)})
      throw ConfigError(w.name, "shape does not match network configuration");
  }
}

Matrix MlpNet::assemble_input(const Matrix& x, std::span<const double> t, const Matrix* cond) const {
  const auto n = x.rows();
  if (static_cast<std::size_t>(x.cols()) != config_.sample_dim)
    throw ConfigError("x", "sample dimension mismatch");
  if (t.size() != static_cast<std::size_t>(n)) throw ConfigError("t", "batch size mismatch");
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1000.0)) throw DomainError("timestep outside [0, 1000]");
  if (config_.cond_dim > 0) {
    if (cond == nullptr) throw ConfigError("cond", "network expects a condition");
    if (cond->rows() != n || static_cast<std::size_t>(cond->cols()) != config_.cond_dim)
      throw ConfigError("cond", "condition shape mismatch");
  }
  Matrix in(n, static_cast<Eigen::Index>(input_dim()));
  const auto d = static_cast<Eigen::Index>(config_.sample_dim);
  in.leftCols(d) = x;
  in.middleCols(d, kTimeEmbedDim) = time_embedding(t);
  if (config_.cond_dim > 0) in.rightCols(static_cast<Eigen::Index>(config_.cond_dim)) = *cond;
  return in;
}

Matrix MlpNet::run(const ParamVector& params, Matrix h, std::size_t depth, ForwardCache* cache,
                   const LoraBranch* branch, double scale) const {
  check_params(params);
  const bool use_branch = branch != nullptr && scale != 0.0;
  if (cache) {
    cache->clear();
    cache->inputs.resize(depth);
    cache->pre.resize(depth);
    cache->low_rank.resize(depth);
    cache->branch = use_branch ? branch : nullptr;
    cache->scale = use_branch ? scale : 0.0;
  }
  for (std::size_t i = 0; i < depth; ++i) {
    const auto w = params.matrix(2 * i);
    const auto& bias = params.layout()[2 * i + 1];
    Matrix z = h * w.transpose();
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params.data() + bias.offset,
                                                        static_cast<Eigen::Index>(bias.numel()));
    if (use_branch && branch->targets(i)) {
      const auto a_mat = branch->factors().matrix(branch->a_index(i));
      const auto b_mat = branch->factors().matrix(branch->b_index(i));
      Matrix mid = h * b_mat.transpose();
      z.noalias() += scale * (mid * a_mat.transpose());
      if (cache) cache->low_rank[i] = std::move(mid);
    }
    const bool hidden = i + 1 < num_linear();
    if (cache) cache->inputs[i] = std::move(h);
    if (hidden) {
      h = activate(z, config_.activation);
      if (cache) cache->pre[i] = std::move(z);
    } else {
      h = std::move(z);
    }
  }
  if (cache) cache->depth = depth;
  return h;
}

Matrix MlpNet::forward(const ParamVector& params, const Matrix& x, std::span<const double> t,
                       const Matrix* cond, ForwardCache* cache, const LoraBranch* branch,
                       double scale) const {
  return run(params, assemble_input(x, t, cond), num_linear(), cache, branch, scale);
}

Matrix MlpNet::forward_features(const ParamVector& params, const Matrix& x,
                                std::span<const double> t, const Matrix* cond, std::size_t tap,
                                ForwardCache* cache) const {
  if (tap >= config_.hidden.size()) throw ConfigError("tap", "feature tap beyond hidden layers");
  return run(params, assemble_input(x, t, cond), tap + 1, cache, nullptr, 0.0);
}

BackwardResult MlpNet::backward(const ParamVector& params, const ForwardCache& cache,
                                const Matrix& upstream, const BackwardOptions& options) const {
  if (!cache.filled()) throw UsageError("backward called without a cached forward pass");
  check_params(params);
  const std::size_t depth = cache.depth;
  const auto n = cache.inputs[0].rows();
  const auto out_dim = static_cast<Eigen::Index>(depth == num_linear() ? linear_out(depth - 1)
                                                                       : config_.hidden[depth - 1]);
  if (upstream.rows() != n || upstream.cols() != out_dim)
    throw ConfigError("upstream", "gradient shape does not match cached output");
  if (options.branch_grad && cache.branch == nullptr)
    throw UsageError("branch gradient requested but the forward pass had no active branch");

  BackwardResult result;
  if (options.param_grad) result.params = params.zeros_like();
  if (options.branch_grad) result.branch = cache.branch->factors().zeros_like();

  Matrix g = upstream;
  for (std::size_t step = depth; step-- > 0;) {
    const std::size_t i = step;
    if (i + 1 < num_linear()) g = g.cwiseProduct(activation_grad(cache.pre[i], config_.activation));
    const Matrix& h = cache.inputs[i];
    if (options.param_grad) {
      result.params.matrix(2 * i).noalias() = g.transpose() * h;
      const auto& bias = params.layout()[2 * i + 1];
      Eigen::Map<Eigen::RowVectorXd>(result.params.data() + bias.offset,
                                     static_cast<Eigen::Index>(bias.numel())) = g.colwise().sum();
    }
    const bool has_branch = cache.branch != nullptr && cache.branch->targets(i);
    Matrix ga;  // g * A
    if (has_branch) {
      const auto a_mat = cache.branch->factors().matrix(cache.branch->a_index(i));
      ga = g * a_mat;
      if (options.branch_grad) {
        result.branch.matrix(cache.branch->a_index(i)).noalias() =
            cache.scale * (g.transpose() * cache.low_rank[i]);
        result.branch.matrix(cache.branch->b_index(i)).noalias() =
            cache.scale * (ga.transpose() * h);
      }
    }
    if (i > 0 || options.input_grad) {
      Matrix next = g * params.matrix(2 * i);
      if (has_branch) {
        const auto b_mat = cache.branch->factors().matrix(cache.branch->b_index(i));
        next.noalias() += cache.scale * (ga * b_mat);
      }
      g = std::move(next);
    }
  }
  if (options.input_grad) result.input = g.leftCols(static_cast<Eigen::Index>(config_.sample_dim));
  return result;
}

}  // namespace w2sd
