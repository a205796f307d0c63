#include "dinomm/vit.hpp"

#include <cmath>

#include "dinomm/rng.hpp"

namespace dinomm {

void ViTConfig::validate() const {
  if (image_size < 1 || patch_size < 1) throw ConfigError("vit: image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("vit: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (in_channels < 1) throw ConfigError("vit: in_channels must be positive");
  if (embed_dim < 1 || depth < 1 || num_heads < 1) throw ConfigError("vit: embed_dim, depth, num_heads must be positive");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_dim() < 1) throw ConfigError("vit: mlp_ratio must be positive");
  if (head_layers < 1) throw ConfigError("vit: head_layers must be >= 1");
  if (head_layers > 1 && head_hidden_dim < 1) throw ConfigError("vit: head_hidden_dim must be positive");
  if (out_dim < 1) throw ConfigError("vit: out_dim must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("vit: norm_eps must be positive");
}

bool decays(const std::string& path) {
  const std::string suffix = ".weight";
  return path.size() > suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
}

namespace {

const Tensor& named(const ParameterSet& params, const std::string& path) {
  auto it = params.find(path);
  if (it == params.end()) throw ContractError("missing parameter: " + path);
  return it->second;
}

}  // namespace

ParameterSet init_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::from_seed(seed).split(0xa11);
  ParameterSet params;
  auto trunc_normal = [&](const std::string& path, Shape shape) {
    Array v(shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = 0.02 * rng.truncated_normal();
    params[path] = Tensor::param(std::move(shape), std::move(v));
  };
  auto zeros = [&](const std::string& path, Shape shape) {
    params[path] = Tensor::param(shape, Array::Zero(shape_numel(shape)));
  };
  auto ones = [&](const std::string& path, Shape shape) {
    params[path] = Tensor::param(shape, Array::Ones(shape_numel(shape)));
  };

  const Index d = cfg.embed_dim;
  // Draw order is this fixed construction order, independent of map order.
  trunc_normal("patch_embed.weight", {cfg.patch_dim(), d});
  zeros("patch_embed.bias", {d});
  zeros("cls_token", {1, 1, d});
  zeros("pos_embed", {1, cfg.tokens(), d});
  for (Index b = 0; b < cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    ones(pre + "norm1.gain", {d});
    zeros(pre + "norm1.bias", {d});
    trunc_normal(pre + "attn.qkv.weight", {d, 3 * d});
    zeros(pre + "attn.qkv.bias", {3 * d});
    trunc_normal(pre + "attn.proj.weight", {d, d});
    zeros(pre + "attn.proj.bias", {d});
    ones(pre + "norm2.gain", {d});
    zeros(pre + "norm2.bias", {d});
    trunc_normal(pre + "mlp.fc1.weight", {d, cfg.mlp_dim()});
    zeros(pre + "mlp.fc1.bias", {cfg.mlp_dim()});
    trunc_normal(pre + "mlp.fc2.weight", {cfg.mlp_dim(), d});
    zeros(pre + "mlp.fc2.bias", {d});
  }
  ones("norm.gain", {d});
  zeros("norm.bias", {d});
  for (Index l = 0; l + 1 < cfg.head_layers; ++l) {
    const Index in = l == 0 ? d : cfg.head_hidden_dim;
    const std::string pre = "head.mlp." + std::to_string(l) + ".";
    trunc_normal(pre + "weight", {in, cfg.head_hidden_dim});
    zeros(pre + "bias", {cfg.head_hidden_dim});
  }
  trunc_normal("head.wn.direction", {cfg.out_dim, cfg.bottleneck_dim()});
  return params;
}

ParameterSet clone_params(const ParameterSet& params, bool requires_grad) {
  ParameterSet out;
  for (const auto& [path, t] : params) {
    out[path] = requires_grad ? Tensor::param(t.shape(), t.values()) : Tensor::from_data(t.shape(), t.values());
  }
  return out;
}

Index param_count(const ParameterSet& params) {
  Index n = 0;
  for (const auto& [path, t] : params) n += t.size();
  return n;
}

void clear_grads(ParameterSet& params) {
  for (auto& [path, t] : params) t.clear_grad();
}

Tensor patchify(const Tensor& images, Index patch_size) {
  if (images.ndim() != 4) throw ShapeError("patchify: expected [B, C, H, W], got " + shape_str(images.shape()));
  const Index b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h != w) throw ShapeError("patchify: images must be square, got " + shape_str(images.shape()));
  if (patch_size < 1 || h % patch_size != 0) {
    throw ShapeError("patchify: size " + std::to_string(h) + " not divisible by patch " + std::to_string(patch_size));
  }
  const Index g = h / patch_size;
  // [B,C,G,P,G,P] -> [B,G,G,C,P,P]: grid row-major, channel-major in patch.
  Tensor x = reshape(images, {b, c, g, patch_size, g, patch_size});
  x = transpose(x, {0, 2, 4, 1, 3, 5});
  return reshape(x, {b, g * g, c * patch_size * patch_size});
}

Tensor unpatchify(const Tensor& patches, Index channels, Index image_size, Index patch_size) {
  if (patches.ndim() != 3) throw ShapeError("unpatchify: expected [B, N, D], got " + shape_str(patches.shape()));
  const Index b = patches.dim(0), n = patches.dim(1), pd = patches.dim(2);
  const Index g = image_size / patch_size;
  if (image_size % patch_size != 0 || n != g * g || pd != channels * patch_size * patch_size) {
    throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " does not match C=" + std::to_string(channels) +
                     ", size=" + std::to_string(image_size) + ", patch=" + std::to_string(patch_size));
  }
  Tensor x = reshape(patches, {b, g, g, channels, patch_size, patch_size});
  x = transpose(x, {0, 3, 1, 4, 2, 5});
  return reshape(x, {b, channels, image_size, image_size});
}

Tensor interpolate_pos_embed(const Tensor& pos, Index target_grid) {
  if (pos.ndim() != 3 || pos.dim(0) != 1) {
    throw ShapeError("interpolate_pos_embed: expected [1, 1+G*G, D], got " + shape_str(pos.shape()));
  }
  const Index tokens = pos.dim(1), d = pos.dim(2);
  const Index g = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(tokens - 1))));
  if (g * g + 1 != tokens) {
    throw ShapeError("interpolate_pos_embed: token count " + std::to_string(tokens) + " is not 1+G*G");
  }
  if (target_grid < 1) throw ShapeError("interpolate_pos_embed: target grid must be positive");
  if (target_grid == g) return pos;
  Tensor cls = slice(pos, 1, 0, 1);
  Tensor grid = reshape(slice(pos, 1, 1, g * g), {g, g, d});
  Tensor resized = bilinear_resize_hw(grid, target_grid, target_grid);
  return concat({cls, reshape(resized, {1, target_grid * target_grid, d})}, 1);
}

namespace {

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

Tensor attention(const ViTConfig& cfg, const ParameterSet& params, const std::string& pre, const Tensor& h) {
  const Index b = h.dim(0), t = h.dim(1), d = cfg.embed_dim;
  const Index heads = cfg.num_heads, dh = d / heads;
  Tensor qkv = linear(h, named(params, pre + "attn.qkv.weight"), named(params, pre + "attn.qkv.bias"));
  qkv = transpose(reshape(qkv, {b, t, 3, heads, dh}), {2, 0, 3, 1, 4});
  Tensor q = reshape(slice(qkv, 0, 0, 1), {b, heads, t, dh});
  Tensor k = reshape(slice(qkv, 0, 1, 1), {b, heads, t, dh});
  Tensor v = reshape(slice(qkv, 0, 2, 1), {b, heads, t, dh});
  Tensor scores = scale(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor ctx = matmul(softmax(scores, 1.0, -1), v);
  ctx = reshape(transpose(ctx, {0, 2, 1, 3}), {b, t, d});
  return linear(ctx, named(params, pre + "attn.proj.weight"), named(params, pre + "attn.proj.bias"));
}

Tensor block(const ViTConfig& cfg, const ParameterSet& params, Index i, const Tensor& x) {
  const std::string pre = "blocks." + std::to_string(i) + ".";
  Tensor h = layer_norm(x, named(params, pre + "norm1.gain"), named(params, pre + "norm1.bias"), cfg.norm_eps);
  Tensor y = add(x, attention(cfg, params, pre, h));
  Tensor h2 = layer_norm(y, named(params, pre + "norm2.gain"), named(params, pre + "norm2.bias"), cfg.norm_eps);
  Tensor m = linear(gelu(linear(h2, named(params, pre + "mlp.fc1.weight"), named(params, pre + "mlp.fc1.bias"))),
                    named(params, pre + "mlp.fc2.weight"), named(params, pre + "mlp.fc2.bias"));
  return add(y, m);
}

}  // namespace

Tensor encode(const ViTConfig& cfg, const ParameterSet& params, const Tensor& images) {
  if (images.ndim() != 4) throw ShapeError("encode: expected [B, C, H, W], got " + shape_str(images.shape()));
  const Index b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != cfg.in_channels) {
    throw ShapeError("encode: got " + std::to_string(c) + " channels, config expects " +
                     std::to_string(cfg.in_channels));
  }
  if (h != w || h % cfg.patch_size != 0) {
    throw ShapeError("encode: image extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be square and divisible by patch " + std::to_string(cfg.patch_size));
  }
  const Index g = h / cfg.patch_size;
  Tensor tok = linear(patchify(images, cfg.patch_size), named(params, "patch_embed.weight"),
                      named(params, "patch_embed.bias"));
  Tensor cls = expand(named(params, "cls_token"), {b, 1, cfg.embed_dim});
  Tensor x = concat({cls, tok}, 1);
  Tensor pos = named(params, "pos_embed");
  if (g != cfg.grid()) pos = interpolate_pos_embed(pos, g);
  x = add(x, pos);
  for (Index i = 0; i < cfg.depth; ++i) x = block(cfg, params, i, x);
  x = layer_norm(x, named(params, "norm.gain"), named(params, "norm.bias"), cfg.norm_eps);
  return reshape(slice(x, 1, 0, 1), {b, cfg.embed_dim});
}

Tensor head_bottleneck(const ViTConfig& cfg, const ParameterSet& params, const Tensor& rep) {
  if (rep.ndim() != 2 || rep.dim(1) != cfg.embed_dim) {
    throw ShapeError("head_bottleneck: expected [B, " + std::to_string(cfg.embed_dim) + "], got " +
                     shape_str(rep.shape()));
  }
  Tensor z = rep;
  for (Index l = 0; l + 1 < cfg.head_layers; ++l) {
    const std::string pre = "head.mlp." + std::to_string(l) + ".";
    z = linear(z, named(params, pre + "weight"), named(params, pre + "bias"));
    if (l + 2 < cfg.head_layers) z = gelu(z);
  }
  return z;
}

Tensor project(const ViTConfig& cfg, const ParameterSet& params, const Tensor& rep) {
  Tensor bn = l2_normalize(head_bottleneck(cfg, params, rep));
  Tensor dirs = l2_normalize(named(params, "head.wn.direction"));
  return matmul(bn, transpose(dirs, {1, 0}));
}

Tensor forward_logits(const ViTConfig& cfg, const ParameterSet& params, const Tensor& images) {
  return project(cfg, params, encode(cfg, params, images));
}

}  // namespace dinomm
