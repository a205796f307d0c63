#include "dinomm/augment.hpp"

#include <algorithm>
#include <cmath>

namespace dinomm {

char drop_mode_letter(DropMode mode) {
  switch (mode) {
    case DropMode::optical_only: return 'O';
    case DropMode::sar_only: return 'S';
    case DropMode::both: return 'M';
  }
  throw ValueError("drop_mode_letter: invalid mode");
}

void AugConfig::validate() const {
  if (global_crop_size < 1 || local_crop_size < 1) throw ConfigError("aug: crop sizes must be positive");
  if (local_crop_size > global_crop_size) throw ConfigError("aug: local crop larger than global crop");
  if (local_crop_count < 0) throw ConfigError("aug: local_crop_count must be >= 0");
  auto range01 = [](double lo, double hi, const char* what) {
    if (!(lo > 0.0) || !(hi <= 1.0) || !(lo <= hi)) {
      throw ConfigError(std::string("aug: bad ") + what + " scale range");
    }
  };
  range01(global_scale_lo, global_scale_hi, "global");
  range01(local_scale_lo, local_scale_hi, "local");
  if (!(aspect_lo > 0.0) || !(aspect_lo <= aspect_hi)) throw ConfigError("aug: bad aspect range");
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("aug: ") + what + " must be a probability");
  };
  prob(hflip_prob, "hflip_prob");
  prob(jitter_prob, "jitter_prob");
  prob(grayscale_prob, "grayscale_prob");
  prob(blur_prob, "blur_prob");
  prob(solarize_prob, "solarize_prob");
  prob(p_drop_sar, "p_drop_sar");
  prob(p_drop_optical, "p_drop_optical");
  prob(p_keep_both, "p_keep_both");
  if (std::abs(p_drop_sar + p_drop_optical + p_keep_both - 1.0) > 1e-9) {
    throw ConfigError("aug: sensor drop probabilities must sum to 1");
  }
  if (!(jitter_strength >= 0.0 && jitter_strength < 1.0)) throw ConfigError("aug: jitter_strength must be in [0, 1)");
  if (!(blur_sigma_lo > 0.0) || !(blur_sigma_lo <= blur_sigma_hi)) throw ConfigError("aug: bad blur sigma range");
  if (!(solarize_threshold >= 0.0 && solarize_threshold <= 1.0)) {
    throw ConfigError("aug: solarize_threshold must be in [0, 1]");
  }
  if (optical_channels < 1 || sar_channels < 1) throw ConfigError("aug: both sensors need at least one channel");
}

namespace {

void check_chw(const Tensor& img, const char* op) {
  if (!img.defined() || img.ndim() != 3) {
    throw ShapeError(std::string(op) + ": expected [C, H, W]" +
                     (img.defined() ? ", got " + shape_str(img.shape()) : ""));
  }
}

}  // namespace

CropGeom draw_crop_geom(Index height, Index width, double scale_lo, double scale_hi,
                        double aspect_lo, double aspect_hi, Rng& rng) {
  const double area = static_cast<double>(height) * static_cast<double>(width);
  const double log_lo = std::log(aspect_lo), log_hi = std::log(aspect_hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(scale_lo, scale_hi) * area;
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const Index w = static_cast<Index>(std::llround(std::sqrt(target * aspect)));
    const Index h = static_cast<Index>(std::llround(std::sqrt(target / aspect)));
    if (w < 1 || h < 1 || w > width || h > height) continue;
    const Index x = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(width - w + 1)));
    const Index y = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(height - h + 1)));
    return CropGeom{x, y, w, h};
  }
  return CropGeom{0, 0, width, height};
}

Tensor crop_resize(const Tensor& img, const CropGeom& geom, Index out_size) {
  check_chw(img, "crop_resize");
  const Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (geom.w < 1 || geom.h < 1 || geom.x < 0 || geom.y < 0 || geom.x + geom.w > w || geom.y + geom.h > h) {
    throw ShapeError("crop_resize: crop rect outside image");
  }
  if (out_size < 1) throw ShapeError("crop_resize: out_size must be positive");
  const Array& v = img.values();
  Array out(c * out_size * out_size);
  // Half-pixel mapping from output samples into the crop rect.
  const double sy = static_cast<double>(geom.h) / static_cast<double>(out_size);
  const double sx = static_cast<double>(geom.w) / static_cast<double>(out_size);
  for (Index i = 0; i < out_size; ++i) {
    double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(geom.h - 1));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, geom.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Index j = 0; j < out_size; ++j) {
      double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(geom.w - 1));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, geom.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (Index ch = 0; ch < c; ++ch) {
        const Index base = ch * h * w;
        const double v00 = v[base + (geom.y + y0) * w + geom.x + x0];
        const double v01 = v[base + (geom.y + y0) * w + geom.x + x1];
        const double v10 = v[base + (geom.y + y1) * w + geom.x + x0];
        const double v11 = v[base + (geom.y + y1) * w + geom.x + x1];
        out[(ch * out_size + i) * out_size + j] =
            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  return Tensor::from_data({c, out_size, out_size}, std::move(out));
}

Tensor hflip(const Tensor& img) {
  check_chw(img, "hflip");
  const Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const Array& v = img.values();
  Array out(v.size());
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      const Index row = (ch * h + y) * w;
      out.segment(row, w) = v.segment(row, w).reverse();
    }
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

Tensor channel_jitter(const Tensor& img, double strength, Rng& rng) {
  check_chw(img, "channel_jitter");
  const Index c = img.dim(0);
  const Index plane = img.dim(1) * img.dim(2);
  Array out(img.size());
  const Array& v = img.values();
  for (Index ch = 0; ch < c; ++ch) {
    const double gain = rng.uniform(1.0 - strength, 1.0 + strength);
    const double offset = rng.uniform(-strength, strength);
    out.segment(ch * plane, plane) = v.segment(ch * plane, plane) * gain + offset;
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

Tensor channel_grayscale(const Tensor& img) {
  check_chw(img, "channel_grayscale");
  const Index c = img.dim(0);
  const Index plane = img.dim(1) * img.dim(2);
  const Array& v = img.values();
  Array mean = Array::Zero(plane);
  for (Index ch = 0; ch < c; ++ch) mean += v.segment(ch * plane, plane);
  mean /= static_cast<double>(c);
  Array out(v.size());
  for (Index ch = 0; ch < c; ++ch) out.segment(ch * plane, plane) = mean;
  return Tensor::from_data(img.shape(), std::move(out));
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
  check_chw(img, "gaussian_blur");
  if (!(sigma > 0.0)) throw ValueError("gaussian_blur: sigma must be positive");
  const Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(2.5 * sigma)));
  Array kernel(2 * radius + 1);
  for (Index k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  kernel /= kernel.sum();
  const Array& v = img.values();
  Array horiz(v.size());
  auto clampi = [](Index x, Index n) { return std::clamp<Index>(x, 0, n - 1); };
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      const Index row = (ch * h + y) * w;
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * v[row + clampi(x + k, w)];
        horiz[row + x] = acc;
      }
    }
  }
  Array out(v.size());
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * horiz[(ch * h + clampi(y + k, h)) * w + x];
        }
        out[(ch * h + y) * w + x] = acc;
      }
    }
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

Tensor solarize(const Tensor& img, double threshold) {
  check_chw(img, "solarize");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValueError("solarize: threshold must be in [0, 1]");
  const Index c = img.dim(0);
  const Index plane = img.dim(1) * img.dim(2);
  const Array& v = img.values();
  Array out = v;
  for (Index ch = 0; ch < c; ++ch) {
    const auto seg = v.segment(ch * plane, plane);
    const double lo = seg.minCoeff();
    const double hi = seg.maxCoeff();
    if (!(hi > lo)) continue;
    // Invert on the channel's own scale above the threshold.
    const double cut = lo + threshold * (hi - lo);
    out.segment(ch * plane, plane) = seg.unaryExpr([&](double t) { return t >= cut ? hi + lo - t : t; });
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

DropMode draw_drop_mode(const AugConfig& cfg, Rng& rng) {
  const double u = rng.uniform();
  if (u < cfg.p_drop_sar) return DropMode::optical_only;
  if (u < cfg.p_drop_sar + cfg.p_drop_optical) return DropMode::sar_only;
  return DropMode::both;
}

Tensor apply_sensor_drop(const Tensor& img, DropMode mode, Index c_optical) {
  check_chw(img, "apply_sensor_drop");
  const Index c = img.dim(0);
  if (c_optical < 1 || c_optical >= c) {
    throw ShapeError("apply_sensor_drop: optical channel count " + std::to_string(c_optical) +
                     " invalid for " + std::to_string(c) + " channels");
  }
  if (mode == DropMode::both) return img;
  const Index plane = img.dim(1) * img.dim(2);
  Array out = img.values();
  if (mode == DropMode::optical_only) {
    out.segment(c_optical * plane, (c - c_optical) * plane).setZero();
  } else {
    out.segment(0, c_optical * plane).setZero();
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

Rng view_stream(std::uint64_t seed, Index epoch, std::uint64_t sample_id) {
  return Rng::from_seed(seed).split(0xa06).split(static_cast<std::uint64_t>(epoch)).split(sample_id);
}

std::vector<ViewRecord> make_views(const Tensor& pixels, const AugConfig& cfg, Rng rng) {
  check_chw(pixels, "make_views");
  if (pixels.dim(0) != cfg.total_channels()) {
    throw ShapeError("make_views: image has " + std::to_string(pixels.dim(0)) + " channels, config expects " +
                     std::to_string(cfg.total_channels()));
  }
  const Index h = pixels.dim(1), w = pixels.dim(2);
  std::vector<ViewRecord> views;
  views.reserve(static_cast<std::size_t>(cfg.views_per_sample()));
  for (Index v = 0; v < cfg.views_per_sample(); ++v) {
    Rng vr = rng.split(static_cast<std::uint64_t>(v));
    ViewRecord rec;
    rec.is_global = v < 2;
    rec.rng_key = vr.key();
    const Index out_size = rec.is_global ? cfg.global_crop_size : cfg.local_crop_size;
    const double lo = rec.is_global ? cfg.global_scale_lo : cfg.local_scale_lo;
    const double hi = rec.is_global ? cfg.global_scale_hi : cfg.local_scale_hi;
    rec.crop = draw_crop_geom(h, w, lo, hi, cfg.aspect_lo, cfg.aspect_hi, vr);
    Tensor img = crop_resize(pixels, rec.crop, out_size);
    if (vr.uniform() < cfg.hflip_prob) {
      img = hflip(img);
      rec.flipped = true;
    }
    if (vr.uniform() < cfg.jitter_prob) img = channel_jitter(img, cfg.jitter_strength, vr);
    if (vr.uniform() < cfg.grayscale_prob) img = channel_grayscale(img);
    if (vr.uniform() < cfg.blur_prob) img = gaussian_blur(img, vr.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
    if (vr.uniform() < cfg.solarize_prob) img = solarize(img, cfg.solarize_threshold);
    rec.drop_mode = draw_drop_mode(cfg, vr);
    rec.image = apply_sensor_drop(img, rec.drop_mode, cfg.optical_channels);
    rec.rng_draws = vr.counter();
    views.push_back(std::move(rec));
  }
  return views;
}

}  // namespace dinomm
