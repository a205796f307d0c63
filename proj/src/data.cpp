#include "dinomm/data.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "dinomm/rng.hpp"
#include "dinomm/serial.hpp"

namespace dinomm {

void Dataset::validate() const {
  if (num_classes < 1) throw FormatError("dataset: num_classes must be >= 1");
  if (c_optical < 1 || c_total <= c_optical) {
    throw FormatError("dataset: need optical and SAR channel blocks, got " + std::to_string(c_optical) +
                      " of " + std::to_string(c_total));
  }
  if (width < 1 || height < 1) throw FormatError("dataset: bad image extent");
  std::unordered_set<std::uint64_t> ids;
  for (const MultimodalSample& s : samples) {
    if (!ids.insert(s.id).second) throw FormatError("dataset: duplicate sample id " + std::to_string(s.id));
    if (static_cast<Index>(s.labels.size()) != num_classes) {
      throw FormatError("dataset: sample " + std::to_string(s.id) + " has " + std::to_string(s.labels.size()) +
                        " labels, expected " + std::to_string(num_classes));
    }
    bool any = false;
    for (std::uint8_t b : s.labels) {
      if (b > 1) throw FormatError("dataset: labels must be 0/1");
      any = any || b == 1;
    }
    if (!any) throw FormatError("dataset: sample " + std::to_string(s.id) + " has no positive label");
    const Shape want{c_total, height, width};
    if (!s.pixels.defined() || s.pixels.shape() != want) {
      throw FormatError("dataset: sample " + std::to_string(s.id) + " pixel shape mismatch");
    }
  }
}

void SynthConfig::validate() const {
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  if (num_classes < 1) throw ConfigError("synth: num_classes must be >= 1");
  if (size < 8) throw ConfigError("synth: size must be >= 8");
  if (c_optical < 1 || c_sar < 1) throw ConfigError("synth: both sensors need at least one channel");
  if (!(label_prob > 0.0 && label_prob <= 1.0)) throw ConfigError("synth: label_prob must be in (0, 1]");
}

namespace {

struct ClassMotif {
  double theta, freq;              // grating orientation and cycles per scene
  Array signature;                 // [C], optical block then SAR block
  std::array<double, 3> ax, ay;    // blob layout anchors, scene-relative
  std::array<double, 3> asigma;    // blob widths, scene-relative
};

void render_blob(Array& img, Index channels, Index size, double cx, double cy, double sigma,
                 const Array& amps) {
  const Index plane = size * size;
  Array mask(plane);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      mask[y * size + x] = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  for (Index c = 0; c < channels; ++c) img.segment(c * plane, plane) += amps[c] * mask;
}

// Oriented sinusoid across the whole scene. The phase varies per sample, so
// the class is carried by orientation and frequency (texture), not by any
// fixed pixel template.
void render_grating(Array& img, Index channels, Index size, double theta, double freq, double phase,
                    const Array& amps) {
  const Index plane = size * size;
  Array wave(plane);
  const double kx = std::cos(theta) * freq * 2.0 * 3.14159265358979323846 / static_cast<double>(size);
  const double ky = std::sin(theta) * freq * 2.0 * 3.14159265358979323846 / static_cast<double>(size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      wave[y * size + x] = std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
    }
  }
  for (Index c = 0; c < channels; ++c) img.segment(c * plane, plane) += amps[c] * wave;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const Index channels = cfg.c_optical + cfg.c_sar;
  const Index plane = cfg.size * cfg.size;
  Rng root = Rng::from_seed(cfg.seed).split(0xda7a);

  // Class motifs: a ring position plus a signed per-channel signature drawn
  // independently of n, so the class geometry is stable across dataset sizes.
  std::vector<ClassMotif> motifs;
  Rng sig_root = root.split(1);
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (Index k = 0; k < cfg.num_classes; ++k) {
    Rng sr = sig_root.split(static_cast<std::uint64_t>(k));
    ClassMotif m;
    // Unique frequency per class keeps classes separable under horizontal
    // flips, which alias orientations th and pi-th.
    m.theta = 3.14159265358979323846 * static_cast<double>(k) / static_cast<double>(cfg.num_classes);
    m.freq = cfg.num_classes > 1
                 ? 2.0 + 3.0 * static_cast<double>(k) / static_cast<double>(cfg.num_classes - 1)
                 : 3.0;
    m.signature = Array(channels);
    for (Index c = 0; c < channels; ++c) {
      const double sign = sr.uniform() < 0.5 ? -1.0 : 1.0;
      m.signature[c] = sign * sr.uniform(0.6, 1.4);
    }
    // Classes share their blob constellation in pairs, so the layout alone
    // cannot separate pair mates; only their gratings can.
    Rng pr = sig_root.split(0x9a1e0000u + static_cast<std::uint64_t>(k / 2));
    for (std::size_t a = 0; a < 3; ++a) {
      m.ax[a] = pr.uniform(0.18, 0.82);
      m.ay[a] = pr.uniform(0.18, 0.82);
      m.asigma[a] = pr.uniform(0.10, 0.16);
    }
    motifs.push_back(std::move(m));
  }

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.c_total = channels;
  ds.c_optical = cfg.c_optical;
  ds.width = cfg.size;
  ds.height = cfg.size;
  ds.samples.reserve(static_cast<std::size_t>(cfg.n));

  Rng sample_root = root.split(2);
  for (Index i = 0; i < cfg.n; ++i) {
    Rng rs = sample_root.split(static_cast<std::uint64_t>(i));
    MultimodalSample s;
    s.id = static_cast<std::uint64_t>(i);
    s.labels.assign(static_cast<std::size_t>(cfg.num_classes), 0);
    bool any = false;
    for (Index k = 0; k < cfg.num_classes; ++k) {
      if (rs.uniform() < cfg.label_prob) {
        s.labels[static_cast<std::size_t>(k)] = 1;
        any = true;
      }
    }
    if (!any) s.labels[rs.uniform_index(static_cast<std::uint64_t>(cfg.num_classes))] = 1;

    Array img = Array::Zero(channels * plane);
    for (Index k = 0; k < cfg.num_classes; ++k) {
      if (s.labels[static_cast<std::size_t>(k)] == 1) {
        const ClassMotif& m = motifs[static_cast<std::size_t>(k)];
        // Scene-wide texture with a fresh phase per sample: class evidence
        // reaches every crop and either sensor alone, but a fixed linear
        // pixel template averages it away.
        const double phase = rs.uniform(0.0, two_pi);
        // Texture lives in the optical block only, so separating pair mates
        // requires optical evidence and the two sensors stay complementary.
        Array grating_amp = 0.8 * m.signature;
        grating_amp.segment(cfg.c_optical, cfg.c_sar).setZero();
        render_grating(img, channels, cfg.size, m.theta, m.freq, phase, grating_amp);
        // Blob constellation at class-fixed anchors, SAR channels only, with
        // a channel-uniform amplitude and a rigid per-sample shift: the class
        // is carried by blob geometry, not by channel means or by absolute
        // position.
        Array layout_amp = Array::Zero(channels);
        layout_amp.segment(cfg.c_optical, cfg.c_sar).setConstant(0.9);
        const double dx = rs.uniform(-0.12, 0.12), dy = rs.uniform(-0.12, 0.12);
        for (std::size_t a = 0; a < 3; ++a) {
          const double jx = (m.ax[a] + dx + 0.03 * rs.normal()) * cfg.size;
          const double jy = (m.ay[a] + dy + 0.03 * rs.normal()) * cfg.size;
          render_blob(img, channels, cfg.size, jx, jy, m.asigma[a] * cfg.size, layout_amp);
        }
      }
    }
    for (int clutter = 0; clutter < 3; ++clutter) {
      const double cx = rs.uniform(0.1, 0.9) * cfg.size;
      const double cy = rs.uniform(0.1, 0.9) * cfg.size;
      const double sg = 0.11 * cfg.size * rs.uniform(0.5, 1.5);
      Array amps(channels);
      for (Index c = 0; c < channels; ++c) amps[c] = rs.uniform(-0.3, 0.3);
      render_blob(img, channels, cfg.size, cx, cy, sg, amps);
    }
    // Per-sensor radiometric jitter, then iid pixel noise.
    const double go = rs.uniform(0.8, 1.2), bo = rs.uniform(-0.15, 0.15);
    const double gs = rs.uniform(0.8, 1.2), bs = rs.uniform(-0.15, 0.15);
    img.segment(0, cfg.c_optical * plane) = img.segment(0, cfg.c_optical * plane) * go + bo;
    img.segment(cfg.c_optical * plane, cfg.c_sar * plane) =
        img.segment(cfg.c_optical * plane, cfg.c_sar * plane) * gs + bs;
    for (Index p = 0; p < img.size(); ++p) img[p] += 0.15 * rs.normal();
    for (Index p = 0; p < img.size(); ++p) img[p] = static_cast<double>(static_cast<float>(img[p]));

    s.pixels = Tensor::from_data({channels, cfg.size, cfg.size}, std::move(img));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  ByteWriter w;
  w.bytes(reinterpret_cast<const std::uint8_t*>("DMM1"), 4);
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u16(static_cast<std::uint16_t>(ds.c_total));
  w.u16(static_cast<std::uint16_t>(ds.c_optical));
  w.u16(static_cast<std::uint16_t>(ds.width));
  w.u16(static_cast<std::uint16_t>(ds.height));
  const std::size_t payload_start = w.size();
  for (const MultimodalSample& s : ds.samples) {
    w.u64(s.id);
    w.bytes(s.labels.data(), s.labels.size());
    const Array& v = s.pixels.values();
    for (Index p = 0; p < v.size(); ++p) w.f32(static_cast<float>(v[p]));
  }
  const std::uint32_t crc = crc32_ieee(w.data().data() + payload_start, w.size() - payload_start);
  w.u32(crc);
  write_file_bytes(path, w.data());
}

Dataset load_dataset(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char magic[4];
  std::memcpy(magic, r.raw(4), 4);
  if (std::string(magic, 4) != "DMM1") throw FormatError(path + ": bad magic, not a dataset file");
  const std::uint16_t version = r.u16();
  if (version != 1) throw FormatError(path + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.num_classes = r.u16();
  const std::uint32_t n = r.u32();
  ds.c_total = r.u16();
  ds.c_optical = r.u16();
  ds.width = r.u16();
  ds.height = r.u16();
  if (ds.num_classes < 1 || ds.c_total < 2 || ds.c_optical < 1 || ds.c_optical >= ds.c_total ||
      ds.width < 1 || ds.height < 1) {
    throw FormatError(path + ": invalid dataset header");
  }
  const std::size_t header = r.pos();
  const std::size_t record = 8 + static_cast<std::size_t>(ds.num_classes) +
                             static_cast<std::size_t>(ds.c_total * ds.width * ds.height) * 4;
  const std::size_t expected = header + static_cast<std::size_t>(n) * record + 4;
  if (bytes.size() < expected) throw FormatError(path + ": truncated dataset file");
  if (bytes.size() > expected) throw FormatError(path + ": trailing bytes after dataset payload");
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[expected - 4]) | (static_cast<std::uint32_t>(bytes[expected - 3]) << 8) |
      (static_cast<std::uint32_t>(bytes[expected - 2]) << 16) |
      (static_cast<std::uint32_t>(bytes[expected - 1]) << 24);
  const std::uint32_t actual_crc = crc32_ieee(bytes.data() + header, expected - 4 - header);
  if (stored_crc != actual_crc) {
    throw FormatError(path + ": crc32 mismatch, file is corrupt");
  }
  ds.samples.reserve(n);
  const Index numel = ds.c_total * ds.height * ds.width;
  for (std::uint32_t i = 0; i < n; ++i) {
    MultimodalSample s;
    s.id = r.u64();
    const std::uint8_t* lab = r.raw(static_cast<std::size_t>(ds.num_classes));
    s.labels.assign(lab, lab + ds.num_classes);
    Array v(numel);
    for (Index p = 0; p < numel; ++p) v[p] = static_cast<double>(r.f32());
    s.pixels = Tensor::from_data({ds.c_total, ds.height, ds.width}, std::move(v));
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

ChannelStats compute_channel_stats(const Dataset& ds) {
  ds.validate();
  if (ds.size() == 0) throw ValueError("compute_channel_stats: empty dataset");
  const Index c = ds.c_total;
  const Index plane = ds.width * ds.height;
  Array sum = Array::Zero(c), sumsq = Array::Zero(c);
  for (const MultimodalSample& s : ds.samples) {
    const Array& v = s.pixels.values();
    for (Index ch = 0; ch < c; ++ch) {
      const auto seg = v.segment(ch * plane, plane);
      sum[ch] += seg.sum();
      sumsq[ch] += seg.square().sum();
    }
  }
  const double count = static_cast<double>(ds.size()) * static_cast<double>(plane);
  ChannelStats stats;
  stats.mean = sum / count;
  Array var = sumsq / count - stats.mean.square();
  stats.stdev = var.max(0.0).sqrt();
  for (Index ch = 0; ch < c; ++ch) {
    if (stats.stdev[ch] < 1e-12) stats.stdev[ch] = 1.0;
  }
  return stats;
}

void normalize_in_place(Dataset& ds, const ChannelStats& stats) {
  if (stats.mean.size() != ds.c_total || stats.stdev.size() != ds.c_total) {
    throw ShapeError("normalize_in_place: stats cover " + std::to_string(stats.mean.size()) +
                     " channels, dataset has " + std::to_string(ds.c_total));
  }
  const Index plane = ds.width * ds.height;
  for (MultimodalSample& s : ds.samples) {
    // Fresh tensors, not writes through values_mut: sample tensors may be
    // shared with copies of the dataset, which must keep their raw pixels.
    Array v = s.pixels.values();
    for (Index ch = 0; ch < ds.c_total; ++ch) {
      v.segment(ch * plane, plane) = (v.segment(ch * plane, plane) - stats.mean[ch]) / stats.stdev[ch];
    }
    s.pixels = Tensor::from_data(s.pixels.shape(), std::move(v));
  }
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, std::uint64_t seed, Index epoch) {
  if (n < 1) throw ValueError("epoch_batches: n must be >= 1");
  if (batch_size < 1) throw ValueError("epoch_batches: batch_size must be >= 1");
  if (epoch < 0) throw ValueError("epoch_batches: epoch must be >= 0");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::from_seed(seed).split(0xba7c).split(static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);
  std::vector<std::vector<Index>> batches;
  for (Index at = 0; at < n; at += batch_size) {
    const Index len = std::min(batch_size, n - at);
    batches.emplace_back(order.begin() + at, order.begin() + at + len);
  }
  return batches;
}

}  // namespace dinomm
