#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dinomm/tensor.hpp"

namespace dinomm {

// Small vision transformer over multichannel square images, plus the
// projection head that maps its cls-token representation to logits.
struct ViTConfig {
  Index image_size{32};
  Index patch_size{8};
  Index in_channels{14};
  Index embed_dim{64};
  Index depth{2};
  Index num_heads{4};
  double mlp_ratio{4.0};
  // head_layers counts every layer in the head, including the final
  // weight-normalized projection. 1 means project directly from the
  // normalized backbone output.
  Index head_hidden_dim{128};
  Index head_layers{4};
  Index out_dim{256};
  double norm_eps{1e-6};

  void validate() const;
  Index grid() const { return image_size / patch_size; }
  Index tokens() const { return grid() * grid() + 1; }
  Index patch_dim() const { return in_channels * patch_size * patch_size; }
  Index mlp_dim() const { return static_cast<Index>(embed_dim * mlp_ratio + 0.5); }
  Index bottleneck_dim() const { return head_layers > 1 ? head_hidden_dim : embed_dim; }
};

// Named parameters, ordered by path for deterministic iteration and
// serialization. Student entries require grad; teacher entries do not.
using ParameterSet = std::map<std::string, Tensor>;

// Weight decay applies to matrix weights only: biases, norm gains/biases,
// tokens, position embeddings, and the weight-norm direction are exempt.
bool decays(const std::string& path);

ParameterSet init_params(const ViTConfig& cfg, std::uint64_t seed);
ParameterSet clone_params(const ParameterSet& params, bool requires_grad);
Index param_count(const ParameterSet& params);
void clear_grads(ParameterSet& params);

// [B, C, H, W] -> [B, N, C*P*P]: patches in row-major grid order, each
// flattened channel-major then row-major within the patch.
Tensor patchify(const Tensor& images, Index patch_size);
// Exact inverse of patchify for the given channel count and image size.
Tensor unpatchify(const Tensor& patches, Index channels, Index image_size, Index patch_size);

// Resizes the grid part of [1, 1+G*G, D] to [1, 1+T*T, D]; the cls slot is
// untouched and T == G returns the input unchanged.
Tensor interpolate_pos_embed(const Tensor& pos, Index target_grid);

// Backbone: returns the final-norm cls representation [B, embed_dim].
// Accepts any square size divisible by patch_size.
Tensor encode(const ViTConfig& cfg, const ParameterSet& params, const Tensor& images);

// Head before the final projection: [B, bottleneck_dim].
Tensor head_bottleneck(const ViTConfig& cfg, const ParameterSet& params, const Tensor& rep);

// Full head: l2-normalized bottleneck through the weight-normalized final
// layer. Rows of the direction matrix are unit-normalized on the fly, so
// logits are bounded by 1 in magnitude.
Tensor project(const ViTConfig& cfg, const ParameterSet& params, const Tensor& rep);

// encode then project: [B, C, H, W] -> [B, out_dim].
Tensor forward_logits(const ViTConfig& cfg, const ParameterSet& params, const Tensor& images);

}  // namespace dinomm
