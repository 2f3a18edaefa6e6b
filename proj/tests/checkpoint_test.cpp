// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <string_view>

#include <gtest/gtest.h>

#include "qatf/errors.hpp"
#include "qatf/schedule.hpp"

namespace qatf::checkpoint {
namespace {

model::TransformerConfig tiny(int bits = 8) {
  model::TransformerConfig c;
  c.layers = 1;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.vocab = 12;
  c.max_len = 16;
  c.quant.bits = bits;
  return c;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

void write_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) { std::memcpy(b.data() + at, &v, 4); }

void reseal(std::vector<std::uint8_t>& b) {
  write_u32(b, 8, crc32(std::span<const std::uint8_t>(b).subspan(12)));
}

Checkpoint sample(const model::Transformer& m, bool integer) {
  Checkpoint c = integer ? export_int(m) : export_fp32(m);
  c.config_text = "[run]\nseed = 3\n";
  c.metadata = {{"kind", integer ? "int" : "fp32"}, {"step", "42"}, {"bits", "8"}};
  return c;
}

Tensor logits(model::Transformer& m, model::Mode mode) {
  const model::TokenMatrix src{1, 4, {2, 3, 4, 1}}, tgt{1, 3, {1, 4, 3}};
  model::ForwardOptions opts;
  opts.quant = model::QuantState::for_mode(mode);
  Graph g(false);
  return m.forward(g, src, tgt, opts).value();
}

TEST(Crc32Test, StandardCheckValue) {
  const std::string_view s = "123456789";
  EXPECT_EQ(crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
}

TEST(CheckpointTest, HeaderLayout) {
  model::Transformer m(tiny(), 1);
  const auto bytes = encode(sample(m, false));
  ASSERT_GE(bytes.size(), 32u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QATF");
  EXPECT_EQ(read_u32(bytes, 4), kFormatVersion);
  EXPECT_EQ(read_u32(bytes, 8), crc32(std::span<const std::uint8_t>(bytes).subspan(12)));
  EXPECT_EQ(read_u32(bytes, 12), m.parameters().size() + m.thresholds().size());
  const std::size_t first = (32 + read_u32(bytes, 16) + read_u32(bytes, 20) + 63) / 64 * 64;
  EXPECT_EQ(read_u32(bytes, first), static_cast<std::uint32_t>(EntryKind::fp32));
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  model::Transformer m(tiny(), 1);
  for (bool integer : {false, true}) {
    const Checkpoint c = sample(m, integer);
    const auto bytes = encode(c);
    const Checkpoint back = decode(bytes);
    EXPECT_EQ(back, c);
    EXPECT_EQ(encode(back), bytes);
  }
}

TEST(CheckpointTest, Inventory) {
  model::Transformer m(tiny(), 1);
  const Checkpoint c = export_int(m);
  EXPECT_EQ(c.count(EntryKind::int_tensor), m.dense_sites().size() * 2 - 1);  // projection has no bias
  EXPECT_EQ(c.count(EntryKind::threshold), m.count_scalars());
  EXPECT_EQ(c.count(EntryKind::fp32) + c.count(EntryKind::int_tensor), m.parameters().size());
  const Entry* e = c.find("proj.x");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->kind, EntryKind::threshold);
  EXPECT_EQ(c.find("no.such.entry"), nullptr);
  for (const Entry& en : c.entries) {
    if (en.kind == EntryKind::int_tensor) {
      EXPECT_EQ(en.ints.bits, 8);
      for (auto v : en.ints.data) ASSERT_LE(std::abs(v), 127);
    }
  }
}

TEST(CheckpointTest, FileRoundTripAndChecksum) {
  const auto dir = std::filesystem::temp_directory_path() / "qatf_checkpoint_test";
  std::filesystem::create_directories(dir);
  model::Transformer m(tiny(), 1);
  const Checkpoint c = sample(m, true);
  save(dir / "a.qatf", c);
  save(dir / "b.qatf", load(dir / "a.qatf"));
  EXPECT_EQ(load(dir / "b.qatf"), c);
  EXPECT_EQ(file_checksum(dir / "a.qatf"), file_checksum(dir / "b.qatf"));
  EXPECT_THROW(load(dir / "missing.qatf"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, CorruptionIsDetected) {
  model::Transformer m(tiny(), 1);
  const auto good = encode(sample(m, false));
  auto bad = good;
  bad[bad.size() / 2] ^= 0x10;
  EXPECT_THROW(decode(bad), IntegrityError);
  bad = good;
  bad[8] ^= 1;
  EXPECT_THROW(decode(bad), IntegrityError);
  EXPECT_THROW(decode({}), FormatError);
  bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode(bad), FormatError);
  bad = good;
  bad.resize(20);
  EXPECT_THROW(decode(bad), FormatError);
}

TEST(CheckpointTest, UnknownVersionOrKindIsFormatError) {
  model::Transformer m(tiny(), 1);
  const auto good = encode(sample(m, false));
  auto bad = good;
  write_u32(bad, 4, 2);
  reseal(bad);
  try {
    decode(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  bad = good;
  const std::size_t first = (32 + read_u32(bad, 16) + read_u32(bad, 20) + 63) / 64 * 64;
  write_u32(bad, first, 7);
  reseal(bad);
  try {
    decode(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("kind 7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("version 1"), std::string::npos);
  }
}

TEST(CheckpointTest, MetadataSeparatorsRejected) {
  Checkpoint c;
  c.metadata["a=b"] = "c";
  EXPECT_THROW(encode(c), FormatError);
  c.metadata = {{"a", "line\nbreak"}};
  EXPECT_THROW(encode(c), FormatError);
}

TEST(ImportTest, Fp32RestoresEveryValue) {
  model::Transformer a(tiny(), 1), b(tiny(), 2);
  for (auto& th : a.thresholds()) th.z = 1.25f;
  ASSERT_NE(schedule::capture(a), schedule::capture(b));
  import_into(b, decode(encode(export_fp32(a))));
  EXPECT_EQ(schedule::capture(a), schedule::capture(b));
}

TEST(ImportTest, IntegerWeightsReproduceFakeQuantForward) {
  model::Transformer a(tiny(), 1), b(tiny(), 2);
  for (auto& th : a.thresholds()) th.init_from_range(4.0f, a.config().quant.with_signed(th.is_signed));
  const Checkpoint c = export_int(a);
  import_into(b, c);
  EXPECT_EQ(logits(a, model::Mode::fake_quant), logits(b, model::Mode::fake_quant));
  // Exporting again gives the same codes.
  EXPECT_EQ(export_int(b), c);
}

TEST(ImportTest, Errors) {
  model::Transformer m(tiny(), 1);
  Checkpoint c = export_fp32(m);
  Checkpoint missing = c;
  missing.entries.pop_back();
  EXPECT_THROW(import_into(m, missing), FormatError);
  Checkpoint extra = c;
  extra.entries.push_back(extra.entries.back());
  extra.entries.back().name = "stray";
  EXPECT_THROW(import_into(m, extra), FormatError);
  model::TransformerConfig wide = tiny();
  wide.d_model = 32;
  wide.d_ff = 64;
  model::Transformer w(wide, 1);
  EXPECT_THROW(import_into(w, c), FormatError);
  model::Transformer six(tiny(6), 1);
  EXPECT_THROW(import_into(six, export_int(m)), FormatError);
}

TEST(ExportTest, Deterministic) {
  model::Transformer a(tiny(), 5), b(tiny(), 5);
  EXPECT_EQ(encode(export_int(a)), encode(export_int(b)));
}

}  // namespace
}  // namespace qatf::checkpoint
