#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dinomm/tensor.hpp"

namespace dinomm {

// One scene: a [C, H, W] channel stack (optical block first, then SAR) and
// a multi-label 0/1 vector with at least one positive.
struct MultimodalSample {
  std::uint64_t id{0};
  std::vector<std::uint8_t> labels;
  Tensor pixels;
};

struct Dataset {
  Index num_classes{0};
  Index c_total{0};
  Index c_optical{0};
  Index width{0};
  Index height{0};
  std::vector<MultimodalSample> samples;

  Index c_sar() const { return c_total - c_optical; }
  Index size() const { return static_cast<Index>(samples.size()); }
  void validate() const;
};

struct SynthConfig {
  Index n{2000};
  Index num_classes{8};
  Index size{64};
  Index c_optical{12};
  Index c_sar{2};
  std::uint64_t seed{0};
  double label_prob{0.3};
  void validate() const;
};

// Class-conditional blob scenes rendered into both sensor blocks with
// per-class channel signatures, plus clutter, per-sensor gain/offset jitter
// and pixel noise. Values are quantized through f32 so a generated dataset
// is bit-identical to its saved-and-reloaded copy.
Dataset generate_synthetic(const SynthConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct ChannelStats {
  Array mean;   // [C]
  Array stdev;  // [C], constant channels pinned to 1
};

ChannelStats compute_channel_stats(const Dataset& ds);
void normalize_in_place(Dataset& ds, const ChannelStats& stats);

// Shuffled index batches for one epoch, keyed by (seed, epoch); the final
// batch may be short. Same key gives the identical partition.
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, std::uint64_t seed, Index epoch);

}  // namespace dinomm
