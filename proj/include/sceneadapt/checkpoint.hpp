#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "sceneadapt/io.hpp"
#include "sceneadapt/nets.hpp"

namespace sceneadapt {

// Binary layout (all integers little-endian):
//   magic "SADPT1" | version u16 | count u32
//   count x { name_len u16 | name | rank u8 | extents u32[rank] | payload f32[numel] }
//   iteration u64 | config_digest u64
inline constexpr std::string_view kCheckpointMagic = "SADPT1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<NamedParam<float>> params;
  std::uint64_t iteration = 0;
  std::uint64_t config_digest = 0;

  const NamedParam<float>* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  bool has_prefix(std::string_view prefix) const {
    for (const auto& p : params)
      if (p.name.starts_with(prefix)) return true;
    return false;
  }

  void append(const ParamStore<float>& store) {
    for (const auto& p : store) params.push_back({p.name, p.value});
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.append(s); }
  const std::string& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint64_t le(std::size_t n, const char* what) {
    need(n, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    if (p.name.size() > 0xFFFF) throw UsageError("parameter name too long: " + p.name);
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name);
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (const std::size_t e : p.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (const float v : p.value.data()) w.f32(v);
  }
  w.u64(ckpt.iteration);
  w.u64(ckpt.config_digest);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw CheckpointError("bad checkpoint magic");
  const auto version = r.u16("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32("parameter count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("parameter name length");
    std::string name(r.raw(len, "parameter name"));
    const auto rank = r.u8("rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.u32("extent");
    Tensor<float> value(shape);
    for (auto& v : value.storage()) v = r.f32(name.c_str());
    ckpt.params.push_back({std::move(name), std::move(value)});
  }
  ckpt.iteration = r.u64("iteration");
  ckpt.config_digest = r.u64("config digest");
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { atomic_write(path, encode_checkpoint(ckpt)); }

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

// Copies every parameter of `store` out of the checkpoint. Missing names and
// shape mismatches fail before any parameter is modified.
inline void load_params(ParamStore<float>& store, const Checkpoint& ckpt) {
  for (const auto& p : store) {
    const NamedParam<float>* src = ckpt.find(p.name);
    if (!src) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (src->value.shape() != p.value.shape())
      throw CheckpointError("shape mismatch for parameter " + p.name + ": checkpoint " + to_string(src->value.shape()) +
                            ", model " + to_string(p.value.shape()));
  }
  for (auto& p : store) p.value.storage() = ckpt.find(p.name)->value.storage();
}

// Reconstructs F's architecture from the shapes stored in a checkpoint.
inline SegNetConfig infer_segnet_config(const Checkpoint& ckpt) {
  const auto* stem = ckpt.find("F.stem.weight");
  const auto* head = ckpt.find("F.head.weight");
  if (!stem || !head) throw CheckpointError("checkpoint lacks segmentation network (F) parameters");
  SegNetConfig cfg;
  cfg.width = stem->value.extent(0);
  cfg.classes = head->value.extent(0);
  cfg.depth = 0;
  while (ckpt.find("F.enc" + std::to_string(cfg.depth + 1) + ".weight")) ++cfg.depth;
  if (cfg.depth == 0) throw CheckpointError("checkpoint lacks F encoder parameters");
  return cfg;
}

}  // namespace sceneadapt
