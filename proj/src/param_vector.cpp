#include "w2sd/param_vector.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "w2sd/errors.hpp"

namespace w2sd {

std::size_t TensorDesc::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t ParamVector::add(std::string name, std::vector<std::size_t> shape) {
  if (contains(name)) throw ConfigError(name, "duplicate tensor name");
  TensorDesc desc{std::move(name), values_.size(), std::move(shape)};
  values_.resize(values_.size() + desc.numel(), 0.0);
  layout_.push_back(std::move(desc));
  return layout_.size() - 1;
}

bool ParamVector::contains(std::string_view name) const {
  for (const auto& d : layout_)
    if (d.name == name) return true;
  return false;
}

const TensorDesc& ParamVector::find(std::string_view name) const {
  for (const auto& d : layout_)
    if (d.name == name) return d;
  throw ConfigError(std::string(name), "no such tensor");
}

std::span<double> ParamVector::tensor(std::string_view name) {
  const auto& d = find(name);
  return {values_.data() + d.offset, d.numel()};
}

std::span<const double> ParamVector::tensor(std::string_view name) const {
  const auto& d = find(name);
  return {values_.data() + d.offset, d.numel()};
}

MatrixMap ParamVector::matrix(std::size_t layout_index) {
  const auto& d = layout_.at(layout_index);
  if (d.shape.size() != 2) throw ConfigError(d.name, "tensor is not 2-D");
  return {values_.data() + d.offset, static_cast<Eigen::Index>(d.shape[0]),
          static_cast<Eigen::Index>(d.shape[1])};
}

ConstMatrixMap ParamVector::matrix(std::size_t layout_index) const {
  const auto& d = layout_.at(layout_index);
  if (d.shape.size() != 2) throw ConfigError(d.name, "tensor is not 2-D");
  return {values_.data() + d.offset, static_cast<Eigen::Index>(d.shape[0]),
          static_cast<Eigen::Index>(d.shape[1])};
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  out.layout_ = layout_;
  out.values_.assign(values_.size(), 0.0);
  return out;
}

void ParamVector::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

bool ParamVector::same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

void ParamVector::axpy(double scale, const ParamVector& other) {
  if (other.size() != size()) throw ConfigError("axpy: size mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

void ParamVector::scale(double factor) {
  for (double& v : values_) v *= factor;
}

double ParamVector::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool ParamVector::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::uint64_t ParamVector::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
  for (std::size_t i = 0; i < values_.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace w2sd
