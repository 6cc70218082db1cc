#include "w2sd/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "w2sd/errors.hpp"

namespace w2sd {

namespace {

constexpr char kMagic[4] = {'W', '2', 'S', 'D'};
constexpr char kFooterMagic[4] = {'W', '2', 'S', 'E'};

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return value;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    value = to_little(value);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(value);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw ConfigError("checkpoint", "truncated record");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

void Checkpoint::add(NamedTensor tensor) {
  std::uint64_t numel = 1;
  for (auto d : tensor.shape) numel *= d;
  if (numel != tensor.data.size()) throw ConfigError(tensor.name, "payload does not match shape");
  if (contains(tensor.name)) throw ConfigError(tensor.name, "duplicate tensor in checkpoint");
  tensors_.push_back(std::move(tensor));
}

void Checkpoint::add(const ParamVector& params) {
  for (const auto& d : params.layout()) {
    const auto values = params.tensor(d.name);
    add(NamedTensor{d.name, {d.shape.begin(), d.shape.end()}, {values.begin(), values.end()}});
  }
}

void Checkpoint::add_scalars(std::string name, std::vector<double> values) {
  const std::uint64_t n = values.size();
  add(NamedTensor{std::move(name), {n}, std::move(values)});
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const NamedTensor& Checkpoint::get(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw ConfigError(std::string(name), "tensor missing from checkpoint");
}

void Checkpoint::restore(ParamVector& params) const {
  for (const auto& d : params.layout()) {
    const auto& t = get(d.name);
    if (!std::equal(t.shape.begin(), t.shape.end(), d.shape.begin(), d.shape.end()))
      throw ConfigError(d.name, "checkpoint shape does not match");
    std::copy(t.data.begin(), t.data.end(), params.tensor(d.name).begin());
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors_.size()));
  const std::size_t payload_begin = w.bytes.size();
  for (const auto& t : tensors_) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_raw(t.name.data(), t.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    for (double v : t.data) w.put<double>(v);
  }
  const std::size_t payload_bytes = w.bytes.size() - payload_begin;
  const std::uint32_t crc = crc_of(w.bytes.data() + payload_begin, payload_bytes);
  w.put<std::uint64_t>(payload_bytes);
  w.put<std::uint32_t>(crc);
  w.put_raw(kFooterMagic, 4);
  return std::move(w.bytes);
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = 12;
  constexpr std::size_t kFooter = 16;
  if (bytes.size() < kHeader + kFooter || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ConfigError("checkpoint", "not a W2SD checkpoint");
  if (std::memcmp(bytes.data() + bytes.size() - 4, kFooterMagic, 4) != 0)
    throw ConfigError("checkpoint", "missing footer");

  Reader header(bytes, 4, kHeader);
  const auto version = header.get<std::uint32_t>();
  if (version != kVersion)
    throw ConfigError("checkpoint", "unsupported format version " + std::to_string(version));
  const auto count = header.get<std::uint32_t>();

  Reader footer(bytes, bytes.size() - kFooter, bytes.size());
  const auto payload_bytes = footer.get<std::uint64_t>();
  const auto crc = footer.get<std::uint32_t>();
  if (payload_bytes != bytes.size() - kHeader - kFooter)
    throw ConfigError("checkpoint", "payload length mismatch");
  if (crc_of(bytes.data() + kHeader, payload_bytes) != crc)
    throw ConfigError("checkpoint", "CRC32 mismatch");

  Checkpoint ckpt;
  Reader r(bytes, kHeader, kHeader + payload_bytes);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<std::uint64_t>());
      numel *= t.shape.back();
    }
    if (numel > payload_bytes / sizeof(double)) throw ConfigError(t.name, "corrupt shape");
    t.data.resize(numel);
    for (auto& v : t.data) v = r.get<double>();
    ckpt.add(std::move(t));
  }
  if (r.pos() != kHeader + payload_bytes) throw ConfigError("checkpoint", "trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("checkpoint", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace w2sd
