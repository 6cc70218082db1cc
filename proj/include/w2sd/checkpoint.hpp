#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "w2sd/param_vector.hpp"

namespace w2sd {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  bool operator==(const NamedTensor&) const = default;
};

/// Little-endian binary tensor container.
///
///   "W2SD" | u32 version | u32 record count
///   records: u32 name length | name | u32 rank | u64 dims[rank] | f64 payload
///   footer:  u64 payload bytes | u32 crc32(payload) | "W2SE"
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(NamedTensor tensor);
  void add(const ParamVector& params);
  void add_scalars(std::string name, std::vector<double> values);

  bool contains(std::string_view name) const;
  const NamedTensor& get(std::string_view name) const;
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  /// Fills every tensor of `params` from the entry with the same name.
  void restore(ParamVector& params) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint&) const = default;

 private:
  std::vector<NamedTensor> tensors_;
};

}  // namespace w2sd
