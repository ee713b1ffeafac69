#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "facl/tensor.hpp"

namespace facl {

/// Serialized training state. Values are 32-bit little-endian floats, which
/// is lossless for runs in f32 storage mode; load then save reproduces the
/// file byte for byte.
struct CheckpointData {
  std::string config_text;
  std::uint8_t precision = 0;  // 0 = f32, 1 = f64 storage at save time
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> bn_stats;
  std::vector<std::pair<std::string, Tensor>> opt_state;
  bool has_bank = false;
  std::size_t bank_capacity = 0, bank_dim = 0, bank_fill = 0, bank_cursor = 0;
  Tensor bank_rows;
  std::string rng_state;
  std::uint64_t step = 0;
};

namespace detail_ckpt {

constexpr char kMagic[4] = {'F', 'A', 'C', 'N'};
constexpr std::uint8_t kVersion = 1;

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(f));
  std::memcpy(&bits, &f, sizeof(bits));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out.append(s);
}

inline void put_tensor(std::string& out, const Tensor& t) {
  put_u64(out, t.shape.size());
  for (std::size_t d : t.shape) put_u64(out, d);
  for (double v : t.data) put_f32(out, v);
}

inline void put_blobs(std::string& out, const std::vector<std::pair<std::string, Tensor>>& blobs) {
  put_u64(out, blobs.size());
  for (const auto& [name, t] : blobs) {
    put_str(out, name);
    put_tensor(out, t);
  }
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f32() {
    need(4);
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
      bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return static_cast<double>(f);
  }

  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  Tensor tensor() {
    const std::uint64_t nd = u64();
    std::vector<std::size_t> shape(nd);
    for (auto& d : shape) d = u64();
    Tensor t(std::move(shape));
    for (double& v : t.data) v = f32();
    return t;
  }

  std::vector<std::pair<std::string, Tensor>> blobs() {
    const std::uint64_t n = u64();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      out.emplace_back(std::move(name), tensor());
    }
    return out;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw std::runtime_error("checkpoint: trailing bytes");
  }

 private:
  void need(std::uint64_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail_ckpt

inline std::string serialize_checkpoint(const CheckpointData& ck) {
  using namespace detail_ckpt;
  std::string out;
  out.append(kMagic, 4);
  put_u8(out, kVersion);
  put_u8(out, ck.precision);
  put_str(out, ck.config_text);
  put_blobs(out, ck.params);
  put_blobs(out, ck.bn_stats);
  put_blobs(out, ck.opt_state);
  put_u8(out, ck.has_bank ? 1 : 0);
  if (ck.has_bank) {
    put_u64(out, ck.bank_capacity);
    put_u64(out, ck.bank_dim);
    put_u64(out, ck.bank_fill);
    put_u64(out, ck.bank_cursor);
    put_tensor(out, ck.bank_rows);
  }
  put_str(out, ck.rng_state);
  put_u64(out, ck.step);
  return out;
}

inline CheckpointData parse_checkpoint(const std::string& bytes) {
  using namespace detail_ckpt;
  if (bytes.size() < 6 || bytes.compare(0, 4, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic, not a FACN file");
  Reader r(bytes.substr(4));
  const std::uint8_t version = r.u8();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  CheckpointData ck;
  ck.precision = r.u8();
  ck.config_text = r.str();
  ck.params = r.blobs();
  ck.bn_stats = r.blobs();
  ck.opt_state = r.blobs();
  ck.has_bank = r.u8() != 0;
  if (ck.has_bank) {
    ck.bank_capacity = r.u64();
    ck.bank_dim = r.u64();
    ck.bank_fill = r.u64();
    ck.bank_cursor = r.u64();
    ck.bank_rows = r.tensor();
  }
  ck.rng_state = r.str();
  ck.step = r.u64();
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const std::string& path, const CheckpointData& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace facl
