// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, little-endian throughout.
//
//   0   "QATF"
//   4   u32 format version
//   8   u32 CRC32 of every byte from offset 12 to the end of the file
//   12  u32 entry count
//   16  u32 config text length
//   20  u32 metadata text length
//   24  8 reserved bytes
//   32  config text, metadata text ("key=value" lines)
//
// Entries start on 64-byte boundaries:
//   u32 kind, u32 name length, u32 rank, i32 bits, f32 scale, u32 flags
//   (bit 0: signed), rank x u64 dims, name, pad to 4 bytes, payload
// Payloads are f32 values (fp32, threshold z) or i32 codes (int).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qatf/model.hpp"
#include "qatf/quant.hpp"

namespace qatf::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class EntryKind : std::uint32_t { fp32 = 0, int_tensor = 1, threshold = 2 };

struct Entry {
  std::string name;
  EntryKind kind = EntryKind::fp32;
  Tensor tensor;       // fp32
  IntTensor ints;      // int_tensor
  float z = 0.0f;      // threshold
  bool is_signed = true;

  friend bool operator==(const Entry&, const Entry&) = default;
};

struct Checkpoint {
  std::string config_text;
  std::map<std::string, std::string> metadata;
  std::vector<Entry> entries;

  const Entry* find(std::string_view name) const;
  std::size_t count(EntryKind kind) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode(const Checkpoint& ckpt);
// Throws FormatError for a bad magic, version or entry kind and
// IntegrityError when the checksum does not match.
Checkpoint decode(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);
// Stored checksum of a checkpoint file.
std::uint32_t file_checksum(const std::filesystem::path& path);
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Every parameter as fp32 plus every threshold z.
Checkpoint export_fp32(const model::Transformer& m);
// Dense weights, biases and the tied embedding as integer codes with their
// scalar and bit-width; layer-norm parameters fp32; every threshold z.
Checkpoint export_int(const model::Transformer& m);

// Loads values by name. Integer entries become their dequantized values with
// the scale pinned. Throws FormatError on a missing or unknown name, a shape
// mismatch, or a bit-width that differs from the model's.
void import_into(model::Transformer& m, const Checkpoint& ckpt);

}  // namespace qatf::checkpoint
