#pragma once

#include <cstdint>
#include <vector>

#include "dinomm/rng.hpp"
#include "dinomm/tensor.hpp"

namespace dinomm {

// Which sensor a view keeps after channel dropping. A view never loses both.
enum class DropMode : std::uint8_t {
  optical_only,  // SAR channels zeroed
  sar_only,      // optical channels zeroed
  both,          // untouched
};

char drop_mode_letter(DropMode mode);  // 'O', 'S', 'M'

struct AugConfig {
  Index global_crop_size{32};
  Index local_crop_size{16};
  Index local_crop_count{8};
  double global_scale_lo{0.4};
  double global_scale_hi{1.0};
  double local_scale_lo{0.05};
  double local_scale_hi{0.4};
  double aspect_lo{0.75};
  double aspect_hi{1.3333333333333333};
  double hflip_prob{0.5};
  double jitter_prob{0.8};
  double jitter_strength{0.4};
  double grayscale_prob{0.2};
  double blur_prob{0.5};
  double blur_sigma_lo{0.1};
  double blur_sigma_hi{2.0};
  double solarize_prob{0.2};
  double solarize_threshold{0.75};
  // Per-view sensor drop distribution, in this order: zero the SAR block,
  // zero the optical block, keep both.
  double p_drop_sar{1.0 / 3.0};
  double p_drop_optical{1.0 / 3.0};
  double p_keep_both{1.0 - 2.0 / 3.0};
  Index optical_channels{12};
  Index sar_channels{2};

  Index total_channels() const { return optical_channels + sar_channels; }
  Index views_per_sample() const { return 2 + local_crop_count; }
  void validate() const;
};

struct CropGeom {
  Index x{0}, y{0}, w{0}, h{0};
};

struct ViewRecord {
  Tensor image;  // [C, s, s], constant
  bool is_global{false};
  DropMode drop_mode{DropMode::both};
  CropGeom crop;
  bool flipped{false};
  std::uint64_t rng_key{0};
  std::uint64_t rng_draws{0};
};

// Crop geometry: up to 10 attempts at area in [lo, hi] * H * W with
// log-uniform aspect, then the whole image as fallback.
CropGeom draw_crop_geom(Index height, Index width, double scale_lo, double scale_hi,
                        double aspect_lo, double aspect_hi, Rng& rng);

// Crops [C, H, W] to geom and resizes to out_size x out_size with bilinear
// half-pixel sampling.
Tensor crop_resize(const Tensor& img, const CropGeom& geom, Index out_size);

Tensor hflip(const Tensor& img);
// Per-channel affine jitter: gain in [1-s, 1+s], offset in [-s, s].
Tensor channel_jitter(const Tensor& img, double strength, Rng& rng);
// Every channel replaced by the cross-channel mean.
Tensor channel_grayscale(const Tensor& img);
// Separable gaussian with replicate padding.
Tensor gaussian_blur(const Tensor& img, double sigma);
// Inverts values above `threshold` on each channel's own [min, max] scale.
Tensor solarize(const Tensor& img, double threshold);

DropMode draw_drop_mode(const AugConfig& cfg, Rng& rng);
// Zeroes the dropped sensor's channel block: optical occupies channels
// [0, c_optical), SAR the rest. Shared by training views and probe masking.
Tensor apply_sensor_drop(const Tensor& img, DropMode mode, Index c_optical);

// Derives the per-(epoch, sample) stream all of a sample's views split from.
Rng view_stream(std::uint64_t seed, Index epoch, std::uint64_t sample_id);

// The full per-sample pipeline: 2 global + local_crop_count local views,
// geometric and photometric transforms first, sensor drop always last.
std::vector<ViewRecord> make_views(const Tensor& pixels, const AugConfig& cfg, Rng rng);

}  // namespace dinomm
