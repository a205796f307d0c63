#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dinomm/checkpoint.hpp"
#include "dinomm/data.hpp"
#include "dinomm/error.hpp"
#include "dinomm/serial.hpp"
#include "dinomm/tensor.hpp"
#include "dinomm/vit.hpp"

using namespace dinomm;

namespace {

std::string scratch_dir() {
  static std::string dir = [] {
    std::string tmpl = (std::filesystem::temp_directory_path() / "dinomm_data_XXXXXX").string();
    char* made = mkdtemp(tmpl.data());
    if (made == nullptr) throw IoError("mkdtemp failed");
    return std::string(made);
  }();
  return dir;
}

std::string scratch_path(const std::string& name) { return scratch_dir() + "/" + name; }

Dataset tiny_dataset() {
  // Two 1x2 scenes over one optical and one SAR channel; channel 1 constant.
  Dataset ds;
  ds.num_classes = 2;
  ds.c_total = 2;
  ds.c_optical = 1;
  ds.width = 2;
  ds.height = 1;
  MultimodalSample a;
  a.id = 1;
  a.labels = {1, 0};
  a.pixels = Tensor::from_values({2, 1, 2}, {1.0, 3.0, 5.0, 5.0});
  MultimodalSample b;
  b.id = 2;
  b.labels = {0, 1};
  b.pixels = Tensor::from_values({2, 1, 2}, {5.0, 7.0, 5.0, 5.0});
  ds.samples = {a, b};
  return ds;
}

template <typename Fn>
void check_format_error(Fn fn, const std::string& needle) {
  try {
    fn();
    FAIL_CHECK("expected FormatError containing '" << needle << "'");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("generate_synthetic is deterministic and f32 clean") {
  SynthConfig cfg;
  cfg.n = 12;
  cfg.num_classes = 4;
  cfg.size = 8;
  cfg.c_optical = 3;
  cfg.c_sar = 2;
  cfg.seed = 9;

  Dataset a = generate_synthetic(cfg);
  Dataset b = generate_synthetic(cfg);
  REQUIRE(a.size() == 12);
  CHECK(a.num_classes == 4);
  CHECK(a.c_total == 5);
  CHECK(a.c_optical == 3);
  CHECK(a.c_sar() == 2);
  CHECK(a.width == 8);
  CHECK(a.height == 8);

  std::set<std::uint64_t> ids;
  for (Index i = 0; i < a.size(); ++i) {
    const MultimodalSample& s = a.samples[static_cast<std::size_t>(i)];
    CHECK(ids.insert(s.id).second);
    REQUIRE(s.labels.size() == 4);
    CHECK(std::count(s.labels.begin(), s.labels.end(), 1) >= 1);
    REQUIRE(s.pixels.shape() == Shape{5, 8, 8});
    // Every pixel survives an f32 round trip unchanged.
    for (Index p = 0; p < s.pixels.size(); ++p) {
      const double v = s.pixels.values()[p];
      CHECK(v == static_cast<double>(static_cast<float>(v)));
    }
    CHECK((s.pixels.values() == b.samples[static_cast<std::size_t>(i)].pixels.values()).all());
    CHECK(s.labels == b.samples[static_cast<std::size_t>(i)].labels);
  }

  SynthConfig other = cfg;
  other.seed = 10;
  Dataset c = generate_synthetic(other);
  CHECK_FALSE((a.samples[0].pixels.values() == c.samples[0].pixels.values()).all());

  SynthConfig bad = cfg;
  bad.size = 4;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("dataset save and load round-trips bitwise") {
  SynthConfig cfg;
  cfg.n = 6;
  cfg.num_classes = 3;
  cfg.size = 8;
  cfg.c_optical = 2;
  cfg.c_sar = 1;
  cfg.seed = 77;
  Dataset ds = generate_synthetic(cfg);

  const std::string path = scratch_path("roundtrip.dmm");
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  REQUIRE(back.size() == ds.size());
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.c_total == ds.c_total);
  CHECK(back.c_optical == ds.c_optical);
  for (Index i = 0; i < ds.size(); ++i) {
    const auto& orig = ds.samples[static_cast<std::size_t>(i)];
    const auto& got = back.samples[static_cast<std::size_t>(i)];
    CHECK(got.id == orig.id);
    CHECK(got.labels == orig.labels);
    CHECK((got.pixels.values() == orig.pixels.values()).all());
  }

  // Saving the reloaded copy reproduces the identical byte stream.
  const std::string path2 = scratch_path("roundtrip2.dmm");
  save_dataset(back, path2);
  CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("dataset loader rejects damaged files") {
  Dataset ds = tiny_dataset();
  const std::string good = scratch_path("good.dmm");
  save_dataset(ds, good);
  const std::vector<std::uint8_t> bytes = read_file_bytes(good);

  auto write_variant = [&](const std::string& name, std::vector<std::uint8_t> data) {
    const std::string p = scratch_path(name);
    write_file_bytes(p, data);
    return p;
  };

  {
    std::vector<std::uint8_t> bad = bytes;
    bad[0] = 'X';
    const std::string p = write_variant("magic.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "bad magic, not a dataset file");
  }
  {
    std::vector<std::uint8_t> bad = bytes;
    bad[4] = 2;  // version lives outside the checksummed records
    const std::string p = write_variant("version.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "unsupported dataset version 2");
  }
  {
    std::vector<std::uint8_t> bad(bytes.begin(), bytes.end() - 7);
    const std::string p = write_variant("short.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "truncated dataset file");
  }
  {
    std::vector<std::uint8_t> bad = bytes;
    bad.push_back(0);
    const std::string p = write_variant("long.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "trailing bytes");
  }
  {
    std::vector<std::uint8_t> bad = bytes;
    bad[bytes.size() / 2] ^= 0x40;  // flip a pixel bit inside the records
    const std::string p = write_variant("flip.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "crc32 mismatch, file is corrupt");
  }
  {
    std::vector<std::uint8_t> bad = bytes;
    bad[12] = 0;  // c_total (little-endian) drops below two channels
    bad[13] = 0;
    const std::string p = write_variant("header.dmm", bad);
    check_format_error([&] { (void)load_dataset(p); }, "invalid dataset header");
  }

  CHECK_THROWS_AS((void)load_dataset(scratch_path("missing.dmm")), IoError);
}

TEST_CASE("dataset validation enforces the sample contract") {
  Dataset ds = tiny_dataset();
  ds.validate();

  Dataset dup = tiny_dataset();
  dup.samples[1].id = dup.samples[0].id;
  check_format_error([&] { dup.validate(); }, "duplicate sample id");

  Dataset badlab = tiny_dataset();
  badlab.samples[0].labels = {2, 0};
  check_format_error([&] { badlab.validate(); }, "labels must be 0/1");

  Dataset nopos = tiny_dataset();
  nopos.samples[0].labels = {0, 0};
  check_format_error([&] { nopos.validate(); }, "no positive label");

  Dataset badshape = tiny_dataset();
  badshape.samples[0].pixels = Tensor::zeros({2, 2, 2});
  check_format_error([&] { badshape.validate(); }, "pixel shape mismatch");

  Dataset badlen = tiny_dataset();
  badlen.samples[0].labels = {1};
  check_format_error([&] { badlen.validate(); }, "has 1 labels");
}

TEST_CASE("channel stats from a hand-checked dataset") {
  Dataset ds = tiny_dataset();
  ChannelStats stats = compute_channel_stats(ds);
  REQUIRE(stats.mean.size() == 2);
  // Channel 0 holds {1, 3, 5, 7}; channel 1 is constant 5.
  CHECK(stats.mean[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(stats.stdev[0] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
  CHECK(stats.mean[1] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(stats.stdev[1] == 1.0);  // constant channel pinned

  Dataset empty = tiny_dataset();
  empty.samples.clear();
  CHECK_THROWS_AS(compute_channel_stats(empty), ValueError);
}

TEST_CASE("normalization standardizes channels without touching copies") {
  Dataset ds = tiny_dataset();
  Dataset copy = ds;  // shares pixel storage until one side is normalized
  ChannelStats stats = compute_channel_stats(ds);

  normalize_in_place(ds, stats);
  const Array& n0 = ds.samples[0].pixels.values();
  CHECK(n0[0] == doctest::Approx((1.0 - 4.0) / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(n0[2] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));  // constant channel maps to zero

  // The untouched copy still holds the raw pixels.
  CHECK(copy.samples[0].pixels.values()[0] == 1.0);
  CHECK(copy.samples[0].pixels.values()[2] == 5.0);

  // Normalizing with the dataset's own stats zeroes the per-channel means.
  double mean0 = 0.0;
  for (const MultimodalSample& s : ds.samples) mean0 += s.pixels.values().segment(0, 2).sum();
  CHECK(mean0 / 4.0 == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  ChannelStats wrong;
  wrong.mean = Array::Zero(3);
  wrong.stdev = Array::Ones(3);
  CHECK_THROWS_AS(normalize_in_place(ds, wrong), ShapeError);
}

TEST_CASE("epoch_batches partitions deterministically") {
  const Index n = 23, bs = 5;
  auto batches = epoch_batches(n, bs, 3, 1);
  REQUIRE(batches.size() == 5);
  CHECK(batches.back().size() == 3);

  std::set<Index> seen;
  for (const auto& b : batches) {
    for (Index i : b) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == static_cast<std::size_t>(n));
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == n - 1);

  auto again = epoch_batches(n, bs, 3, 1);
  CHECK(batches == again);
  CHECK(epoch_batches(n, bs, 3, 2) != batches);
  CHECK(epoch_batches(n, bs, 4, 1) != batches);

  // A realistic epoch is not the identity ordering.
  auto big = epoch_batches(256, 256, 3, 0);
  std::vector<Index> identity(256);
  for (Index i = 0; i < 256; ++i) identity[static_cast<std::size_t>(i)] = i;
  CHECK(big[0] != identity);

  CHECK_THROWS_AS(epoch_batches(0, 5, 3, 1), ValueError);
  CHECK_THROWS_AS(epoch_batches(5, 0, 3, 1), ValueError);
  CHECK_THROWS_AS(epoch_batches(5, 5, 3, -1), ValueError);
}

TEST_CASE("checkpoint round-trips every field bitwise") {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.in_channels = 2;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.head_layers = 2;
  cfg.head_hidden_dim = 8;
  cfg.out_dim = 6;

  Checkpoint ckpt;
  ckpt.config_text = "train.epochs = 3\n";
  ckpt.config_hash = fnv1a64(ckpt.config_text);
  ckpt.seed = 123;
  ckpt.step = 42;
  ckpt.epochs_done = 2;
  ckpt.adam_t = 42;
  ckpt.student = init_params(cfg, 5);
  ckpt.teacher = clone_params(init_params(cfg, 6), false);
  for (const auto& [path, p] : ckpt.student) {
    AdamW::Slot slot{Array::Constant(p.size(), 0.25), Array::Constant(p.size(), 0.5)};
    ckpt.adam[path] = std::move(slot);
  }
  ckpt.center = Array::LinSpaced(cfg.out_dim, -1.0, 1.0);

  const std::string path = scratch_path("state.dmmc");
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);

  CHECK(back.config_text == ckpt.config_text);
  CHECK(back.config_hash == ckpt.config_hash);
  CHECK(back.seed == 123);
  CHECK(back.step == 42);
  CHECK(back.epochs_done == 2);
  CHECK(back.adam_t == 42);
  CHECK((back.center == ckpt.center).all());
  REQUIRE(back.student.size() == ckpt.student.size());
  for (const auto& [key, p] : ckpt.student) {
    CHECK(back.student.at(key).shape() == p.shape());
    CHECK((back.student.at(key).values() == p.values()).all());
    CHECK(back.student.at(key).requires_grad());
    CHECK((back.teacher.at(key).values() == ckpt.teacher.at(key).values()).all());
    CHECK_FALSE(back.teacher.at(key).requires_grad());
    CHECK((back.adam.at(key).m == ckpt.adam.at(key).m).all());
    CHECK((back.adam.at(key).v == ckpt.adam.at(key).v).all());
  }

  // Saving the loaded state reproduces the identical byte stream.
  const std::string path2 = scratch_path("state2.dmmc");
  save_checkpoint(back, path2);
  CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("checkpoint loader rejects damaged files") {
  Checkpoint ckpt;
  ckpt.config_text = "train.epochs = 1\n";
  ckpt.config_hash = fnv1a64(ckpt.config_text);
  ckpt.student["w"] = Tensor::param({2, 2}, Array::LinSpaced(4, 0.0, 3.0));
  ckpt.teacher["w"] = Tensor::from_data({2, 2}, Array::LinSpaced(4, 1.0, 4.0));
  ckpt.adam["w"] = AdamW::Slot{Array::Zero(4), Array::Zero(4)};
  ckpt.center = Array::Zero(3);

  const std::string good = scratch_path("ok.dmmc");
  save_checkpoint(ckpt, good);
  const std::vector<std::uint8_t> bytes = read_file_bytes(good);

  auto write_variant = [&](const std::string& name, std::vector<std::uint8_t> data) {
    const std::string p = scratch_path(name);
    write_file_bytes(p, data);
    return p;
  };

  {
    std::vector<std::uint8_t> bad = bytes;
    bad[0] = 'Z';
    const std::string p = write_variant("magic.dmmc", bad);
    check_format_error([&] { (void)load_checkpoint(p); }, "bad magic, not a checkpoint");
  }
  {
    std::vector<std::uint8_t> bad(bytes.begin(), bytes.begin() + 6);
    const std::string p = write_variant("stub.dmmc", bad);
    check_format_error([&] { (void)load_checkpoint(p); }, "truncated checkpoint file");
  }
  {
    std::vector<std::uint8_t> bad = bytes;
    bad[bytes.size() / 2] ^= 0x01;
    const std::string p = write_variant("flip.dmmc", bad);
    check_format_error([&] { (void)load_checkpoint(p); }, "crc32 mismatch, checkpoint is corrupt");
  }
  {
    // A version bump with a recomputed checksum is structurally intact but
    // still refused.
    std::vector<std::uint8_t> bad = bytes;
    bad[4] = 2;
    const std::uint32_t crc = crc32_ieee(bad.data(), bad.size() - 4);
    bad[bad.size() - 4] = static_cast<std::uint8_t>(crc & 0xff);
    bad[bad.size() - 3] = static_cast<std::uint8_t>((crc >> 8) & 0xff);
    bad[bad.size() - 2] = static_cast<std::uint8_t>((crc >> 16) & 0xff);
    bad[bad.size() - 1] = static_cast<std::uint8_t>((crc >> 24) & 0xff);
    const std::string p = write_variant("version.dmmc", bad);
    check_format_error([&] { (void)load_checkpoint(p); }, "unsupported checkpoint version 2");
  }
  {
    Checkpoint lying = ckpt;
    lying.config_hash ^= 1;
    const std::string p = scratch_path("hash.dmmc");
    save_checkpoint(lying, p);
    check_format_error([&] { (void)load_checkpoint(p); }, "config hash does not match config text");
  }

  Checkpoint ragged = ckpt;
  ragged.adam.erase("w");
  CHECK_THROWS_AS(save_checkpoint(ragged, scratch_path("ragged.dmmc")), ContractError);
}
