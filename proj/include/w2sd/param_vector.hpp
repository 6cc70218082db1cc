#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "w2sd/types.hpp"

namespace w2sd {

struct TensorDesc {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t numel() const;
  bool operator==(const TensorDesc&) const = default;
};

/// Flat storage for a set of named tensors laid out back to back.
///
/// Tensors are appended in order and never removed, so offsets stay
/// contiguous and the total length always equals the sum of shape products.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends a zero-filled tensor and returns its index in the layout.
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  const std::vector<TensorDesc>& layout() const { return layout_; }
  bool contains(std::string_view name) const;
  const TensorDesc& find(std::string_view name) const;

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
  /// 2-D tensor viewed as a row-major matrix.
  MatrixMap matrix(std::size_t layout_index);
  ConstMatrixMap matrix(std::size_t layout_index) const;

  /// Same layout, all values zero.
  ParamVector zeros_like() const;
  void set_zero();
  bool same_layout(const ParamVector& other) const;

  /// this += scale * other
  void axpy(double scale, const ParamVector& other);
  void scale(double factor);

  double norm() const;
  bool all_finite() const;
  /// FNV-1a over the raw bytes; used to assert frozen parameters stay frozen.
  std::uint64_t checksum() const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
  std::vector<TensorDesc> layout_;
};

}  // namespace w2sd
