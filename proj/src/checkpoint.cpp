// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <zlib.h>

#include "qatf/errors.hpp"

namespace qatf::checkpoint {
namespace {

constexpr std::size_t kHeaderSize = 32;
constexpr std::size_t kAlign = 64;
constexpr std::uint8_t kMagic[4] = {'Q', 'A', 'T', 'F'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void pad_to(std::size_t align) {
    while (buf_.size() % align) buf_.push_back(0);
  }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError(fmt::format("checkpoint truncated at byte {}", pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void align(std::size_t a) { pos_ = (pos_ + a - 1) / a * a; }
  void seek(std::size_t p) { pos_ = p; }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError(fmt::format("metadata key '{}' or its value contains a separator", k));
    }
    out += fmt::format("{}={}\n", k, v);
  }
  return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(fmt::format("malformed metadata line '{}'", line));
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace

const Entry* Checkpoint::find(std::string_view name) const {
  for (const Entry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t Checkpoint::count(EntryKind kind) const {
  std::size_t n = 0;
  for (const Entry& e : entries) n += e.kind == kind ? 1 : 0;
  return n;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode(const Checkpoint& ckpt) {
  Writer w;
  const std::string meta = encode_metadata(ckpt.metadata);
  w.bytes(std::string_view(reinterpret_cast<const char*>(kMagic), 4));
  w.u32(kFormatVersion);
  w.u32(0);  // checksum, patched below
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.u64(0);
  w.bytes(ckpt.config_text);
  w.bytes(meta);
  std::set<std::string> names;
  for (const Entry& e : ckpt.entries) {
    if (!names.insert(e.name).second) throw FormatError(fmt::format("duplicate entry '{}'", e.name));
    w.pad_to(kAlign);
    const Shape shape = e.kind == EntryKind::fp32         ? e.tensor.shape()
                        : e.kind == EntryKind::int_tensor ? e.ints.shape
                                                          : Shape{1};
    w.u32(static_cast<std::uint32_t>(e.kind));
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.u32(static_cast<std::uint32_t>(shape.size()));
    w.u32(static_cast<std::uint32_t>(e.kind == EntryKind::int_tensor ? e.ints.bits : 0));
    w.f32(e.kind == EntryKind::int_tensor ? e.ints.scale : 0.0f);
    const bool is_signed = e.kind == EntryKind::int_tensor ? e.ints.is_signed : e.is_signed;
    w.u32(is_signed ? 1u : 0u);
    for (std::size_t d : shape) w.u64(d);
    w.bytes(e.name);
    w.pad_to(4);
    switch (e.kind) {
      case EntryKind::fp32:
        for (float v : e.tensor.data()) w.f32(v);
        break;
      case EntryKind::int_tensor:
        e.ints.validate();
        for (std::int32_t v : e.ints.data) w.u32(static_cast<std::uint32_t>(v));
        break;
      case EntryKind::threshold:
        w.f32(e.z);
        break;
    }
  }
  auto& buf = w.buffer();
  w.patch_u32(8, crc32(std::span<const std::uint8_t>(buf).subspan(12)));
  return std::move(buf);
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: magic mismatch (expected \"QATF\")");
  }
  if (bytes.size() < kHeaderSize) throw FormatError("checkpoint header truncated");
  Reader r(bytes);
  r.seek(4);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError(fmt::format("unsupported checkpoint format version {} (this build reads version {})", version,
                                  kFormatVersion));
  }
  const std::uint32_t stored = r.u32();
  const std::uint32_t actual = crc32(bytes.subspan(12));
  if (stored != actual) {
    throw IntegrityError(fmt::format("checkpoint checksum mismatch: stored {:08x}, computed {:08x}", stored, actual));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t config_len = r.u32();
  const std::uint32_t meta_len = r.u32();
  r.seek(kHeaderSize);
  Checkpoint ckpt;
  ckpt.config_text = r.str(config_len);
  ckpt.metadata = decode_metadata(r.str(meta_len));
  for (std::uint32_t i = 0; i < count; ++i) {
    r.align(kAlign);
    const std::uint32_t kind = r.u32();
    if (kind > static_cast<std::uint32_t>(EntryKind::threshold)) {
      throw FormatError(fmt::format("unknown entry kind {} in format version {}", kind, version));
    }
    Entry e;
    e.kind = static_cast<EntryKind>(kind);
    const std::uint32_t name_len = r.u32();
    const std::uint32_t rank = r.u32();
    const auto bits = static_cast<std::int32_t>(r.u32());
    const float scale = r.f32();
    const std::uint32_t flags = r.u32();
    if (rank == 0 || rank > 8) throw FormatError(fmt::format("entry {} has invalid rank {}", i, rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      if (d == 0 || d > (std::size_t{1} << 32)) throw FormatError(fmt::format("entry {} has invalid extent {}", i, d));
    }
    e.name = r.str(name_len);
    r.align(4);
    const std::size_t n = shape_size(shape);
    r.need(n * 4);
    e.is_signed = (flags & 1u) != 0;
    switch (e.kind) {
      case EntryKind::fp32: {
        std::vector<float> v(n);
        for (auto& x : v) x = r.f32();
        e.tensor = Tensor(shape, std::move(v));
        break;
      }
      case EntryKind::int_tensor: {
        e.ints.shape = shape;
        e.ints.data.resize(n);
        for (auto& x : e.ints.data) x = static_cast<std::int32_t>(r.u32());
        e.ints.scale = scale;
        e.ints.bits = bits;
        e.ints.is_signed = e.is_signed;
        e.ints.validate();
        break;
      }
      case EntryKind::threshold:
        if (n != 1) throw FormatError(fmt::format("threshold entry '{}' must hold one value", e.name));
        e.z = r.f32();
        break;
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("writing checkpoint '{}' failed", path.string()));
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read checkpoint '{}'", path.string()));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

Checkpoint load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode(bytes);
}

std::uint32_t file_checksum(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: magic mismatch (expected \"QATF\")");
  }
  Reader r(bytes);
  r.seek(8);
  return r.u32();
}

Checkpoint export_fp32(const model::Transformer& m) {
  Checkpoint ckpt;
  for (const Parameter* p : m.parameters()) {
    Entry e;
    e.name = p->name;
    e.kind = EntryKind::fp32;
    e.tensor = p->value;
    ckpt.entries.push_back(std::move(e));
  }
  for (const ThresholdScalar& th : m.thresholds()) {
    Entry e;
    e.name = th.site_name;
    e.kind = EntryKind::threshold;
    e.z = th.z;
    e.is_signed = th.is_signed;
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

Checkpoint export_int(const model::Transformer& m) {
  const QuantConfig cfg = m.config().quant.with_signed(true);
  std::set<const Parameter*> quantized;
  for (const model::DenseSite& site : m.dense_sites()) {
    quantized.insert(site.weight);
    if (site.bias) quantized.insert(site.bias);
  }
  Checkpoint ckpt = export_fp32(m);
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter* p = params[i];
    if (!quantized.count(p)) continue;
    Entry& e = ckpt.entries[i];
    const float s = p->pinned_scale > 0.0f ? p->pinned_scale : range_scalar_signed(p->value, cfg);
    e.kind = EntryKind::int_tensor;
    e.ints = quantize_signed(p->value, s, cfg);
    e.tensor = Tensor();
  }
  return ckpt;
}

void import_into(model::Transformer& m, const Checkpoint& ckpt) {
  std::set<std::string> used;
  for (Parameter* p : m.parameters()) {
    const Entry* e = ckpt.find(p->name);
    if (!e) throw FormatError(fmt::format("checkpoint has no entry for parameter '{}'", p->name));
    used.insert(p->name);
    if (e->kind == EntryKind::fp32) {
      if (e->tensor.shape() != p->value.shape()) {
        throw FormatError(fmt::format("'{}': checkpoint shape {} but model expects {}", p->name,
                                      shape_str(e->tensor.shape()), shape_str(p->value.shape())));
      }
      p->value = e->tensor;
      p->pinned_scale = 0.0f;
    } else if (e->kind == EntryKind::int_tensor) {
      if (e->ints.shape != p->value.shape()) {
        throw FormatError(fmt::format("'{}': checkpoint shape {} but model expects {}", p->name, shape_str(e->ints.shape),
                                      shape_str(p->value.shape())));
      }
      if (e->ints.bits != m.config().quant.bits) {
        throw FormatError(fmt::format("'{}' holds {}-bit codes but the model is configured for {} bits", p->name,
                                      e->ints.bits, m.config().quant.bits));
      }
      p->value = e->ints.dequantize();
      p->pinned_scale = e->ints.scale;
    } else {
      throw FormatError(fmt::format("'{}' is a threshold entry but names a parameter", p->name));
    }
  }
  for (ThresholdScalar& th : m.thresholds()) {
    const Entry* e = ckpt.find(th.site_name);
    if (!e || e->kind != EntryKind::threshold) {
      throw FormatError(fmt::format("checkpoint has no threshold entry for site '{}'", th.site_name));
    }
    used.insert(th.site_name);
    th.z = e->z;
  }
  for (const Entry& e : ckpt.entries) {
    if (!used.count(e.name)) throw FormatError(fmt::format("checkpoint entry '{}' does not belong to this model", e.name));
  }
}

}  // namespace qatf::checkpoint
