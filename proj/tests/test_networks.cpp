#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "dinomm/error.hpp"
#include "dinomm/rng.hpp"
#include "dinomm/tensor.hpp"
#include "dinomm/vit.hpp"

using namespace dinomm;

namespace {

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && (a.values() == b.values()).all();
}

ViTConfig tiny_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.in_channels = 3;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.head_hidden_dim = 24;
  cfg.head_layers = 3;
  cfg.out_dim = 12;
  return cfg;
}

}  // namespace

TEST_CASE("config derived sizes") {
  ViTConfig cfg;
  CHECK(cfg.grid() == 4);
  CHECK(cfg.tokens() == 17);
  CHECK(cfg.patch_dim() == 14 * 8 * 8);
  CHECK(cfg.mlp_dim() == 256);
  CHECK(cfg.bottleneck_dim() == cfg.head_hidden_dim);

  ViTConfig direct = cfg;
  direct.head_layers = 1;
  CHECK(direct.bottleneck_dim() == direct.embed_dim);

  ViTConfig bad = cfg;
  bad.image_size = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.embed_dim = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.head_layers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init_params produces the expected parameter set") {
  ViTConfig cfg;
  ParameterSet params = init_params(cfg, 3);

  CHECK(params.count("patch_embed.weight") == 1);
  CHECK(params.count("cls_token") == 1);
  CHECK(params.count("pos_embed") == 1);
  CHECK(params.count("blocks.0.attn.qkv.weight") == 1);
  CHECK(params.count("blocks.1.mlp.fc2.bias") == 1);
  CHECK(params.count("norm.gain") == 1);
  CHECK(params.count("head.mlp.0.weight") == 1);
  CHECK(params.count("head.mlp.2.weight") == 1);
  CHECK(params.count("head.mlp.3.weight") == 0);
  CHECK(params.count("head.wn.direction") == 1);

  CHECK(params.at("patch_embed.weight").shape() == Shape{cfg.patch_dim(), cfg.embed_dim});
  CHECK(params.at("pos_embed").shape() == Shape{1, cfg.tokens(), cfg.embed_dim});
  CHECK(params.at("head.mlp.0.weight").shape() == Shape{cfg.embed_dim, cfg.head_hidden_dim});
  CHECK(params.at("head.mlp.1.weight").shape() == Shape{cfg.head_hidden_dim, cfg.head_hidden_dim});
  CHECK(params.at("head.wn.direction").shape() == Shape{cfg.out_dim, cfg.bottleneck_dim()});

  // cls token and positional embeddings start at zero, norms at identity.
  CHECK((params.at("cls_token").values() == 0.0).all());
  CHECK((params.at("pos_embed").values() == 0.0).all());
  CHECK((params.at("norm.gain").values() == 1.0).all());
  CHECK((params.at("blocks.0.norm1.bias").values() == 0.0).all());

  // Weights are scaled truncated normal draws: small, nonzero, bounded.
  const Array& w = params.at("patch_embed.weight").values();
  CHECK(w.abs().maxCoeff() <= 0.04);
  CHECK(w.abs().maxCoeff() > 0.0);

  for (const auto& [path, p] : params) {
    CHECK(p.requires_grad());
    Index want = 1;
    for (Index d : p.shape()) want *= d;
    CHECK(p.size() == want);
  }
}

TEST_CASE("init_params is seed deterministic") {
  ViTConfig cfg = tiny_config();
  ParameterSet a = init_params(cfg, 11);
  ParameterSet b = init_params(cfg, 11);
  ParameterSet c = init_params(cfg, 12);
  REQUIRE(a.size() == b.size());
  for (const auto& [path, p] : a) CHECK(same_values(p, b.at(path)));
  CHECK_FALSE(same_values(a.at("patch_embed.weight"), c.at("patch_embed.weight")));
}

TEST_CASE("decays selects matrix weights only") {
  CHECK(decays("patch_embed.weight"));
  CHECK(decays("blocks.0.attn.qkv.weight"));
  CHECK(decays("head.mlp.1.weight"));
  CHECK_FALSE(decays("patch_embed.bias"));
  CHECK_FALSE(decays("blocks.0.norm1.gain"));
  CHECK_FALSE(decays("cls_token"));
  CHECK_FALSE(decays("pos_embed"));
  CHECK_FALSE(decays("head.wn.direction"));
}

TEST_CASE("clone_params copies values into an independent set") {
  ViTConfig cfg = tiny_config();
  ParameterSet a = init_params(cfg, 5);
  ParameterSet b = clone_params(a, false);
  REQUIRE(a.size() == b.size());
  for (const auto& [path, p] : a) {
    CHECK(same_values(p, b.at(path)));
    CHECK_FALSE(b.at(path).requires_grad());
  }
  b.at("cls_token").values_mut()[0] = 99.0;
  CHECK(a.at("cls_token").values()[0] == 0.0);

  CHECK(param_count(a) == param_count(b));
  CHECK(param_count(a) > 0);
}

TEST_CASE("encode reports a missing parameter") {
  ViTConfig cfg = tiny_config();
  ParameterSet params = init_params(cfg, 3);
  params.erase("pos_embed");
  Tensor images = Tensor::zeros({1, cfg.in_channels, cfg.image_size, cfg.image_size});
  CHECK_THROWS_AS((void)encode(cfg, params, images), ContractError);
}

TEST_CASE("patchify layout oracle") {
  // One 4x4 single-channel image holding its own linear pixel index.
  std::vector<double> px(16);
  for (int i = 0; i < 16; ++i) px[i] = i;
  Tensor img = Tensor::from_values({1, 1, 4, 4}, px);
  Tensor patches = patchify(img, 2);
  REQUIRE(patches.shape() == Shape{1, 4, 4});

  // Patches scan the grid row-major; within a patch pixels stay row-major.
  const std::vector<double> want = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  for (int i = 0; i < 16; ++i) CHECK(patches.values()[i] == want[i]);
}

TEST_CASE("patchify keeps channels contiguous inside a patch") {
  std::vector<double> px(2 * 4);  // 2 channels of a 2x2 image, patch covers it whole
  for (int i = 0; i < 8; ++i) px[i] = i;
  Tensor img = Tensor::from_values({1, 2, 2, 2}, px);
  Tensor patches = patchify(img, 2);
  REQUIRE(patches.shape() == Shape{1, 1, 8});
  // Channel 0 pixels first, then channel 1: the input was already [C][H][W].
  for (int i = 0; i < 8; ++i) CHECK(patches.values()[i] == i);
}

TEST_CASE("unpatchify inverts patchify bitwise") {
  Rng rng = Rng::from_seed(21);
  std::vector<double> px(2 * 3 * 8 * 8);
  for (double& v : px) v = rng.normal();
  Tensor img = Tensor::from_values({2, 3, 8, 8}, px);
  Tensor back = unpatchify(patchify(img, 4), 3, 8, 4);
  CHECK(same_values(img, back));

  CHECK_THROWS_AS(patchify(img, 3), ShapeError);
  CHECK_THROWS_AS(patchify(Tensor::zeros({2, 3, 8}), 4), ShapeError);
}

TEST_CASE("interpolate_pos_embed grid behaviour") {
  const Index d = 6;
  Rng rng = Rng::from_seed(8);
  std::vector<double> v(1 * 17 * d);
  for (double& x : v) x = rng.normal();
  Tensor pos = Tensor::from_values({1, 17, d}, v);

  Tensor same = interpolate_pos_embed(pos, 4);
  CHECK(same_values(pos, same));

  Tensor up = interpolate_pos_embed(pos, 8);
  REQUIRE(up.shape() == Shape{1, 65, d});
  // The cls slot is carried over untouched.
  for (Index j = 0; j < d; ++j) CHECK(up.values()[j] == pos.values()[j]);
  // Grid corners are fixed points of bilinear resampling.
  for (Index j = 0; j < d; ++j) {
    CHECK(up.values()[(1 + 0) * d + j] == doctest::Approx(pos.values()[(1 + 0) * d + j]).epsilon(1e-12));
    CHECK(up.values()[(1 + 63) * d + j] == doctest::Approx(pos.values()[(1 + 15) * d + j]).epsilon(1e-12));
  }
}

TEST_CASE("encode maps image batches to cls representations") {
  ViTConfig cfg;
  ParameterSet params = init_params(cfg, 17);
  Rng rng = Rng::from_seed(99);

  std::vector<double> px(3 * 14 * 32 * 32);
  for (double& v : px) v = rng.normal();
  Tensor rep = encode(cfg, params, Tensor::from_values({3, 14, 32, 32}, px));
  REQUIRE(rep.shape() == Shape{3, 64});
  CHECK(rep.values().isFinite().all());

  // Any square extent divisible by the patch is accepted.
  std::vector<double> big(1 * 14 * 64 * 64);
  for (double& v : big) v = rng.normal();
  Tensor rep2 = encode(cfg, params, Tensor::from_values({1, 14, 64, 64}, big));
  REQUIRE(rep2.shape() == Shape{1, 64});
  CHECK(rep2.values().isFinite().all());

  CHECK_THROWS_AS(encode(cfg, params, Tensor::zeros({1, 13, 32, 32})), ShapeError);
  CHECK_THROWS_AS(encode(cfg, params, Tensor::zeros({1, 14, 32, 48})), ShapeError);
  CHECK_THROWS_AS(encode(cfg, params, Tensor::zeros({1, 14, 36, 36})), ShapeError);
}

TEST_CASE("encode batches match single-image encodes") {
  ViTConfig cfg = tiny_config();
  ParameterSet params = init_params(cfg, 31);
  Rng rng = Rng::from_seed(32);
  std::vector<double> px(2 * 3 * 8 * 8);
  for (double& v : px) v = rng.normal();
  Tensor batch = Tensor::from_values({2, 3, 8, 8}, px);

  Tensor both = encode(cfg, params, batch);
  Tensor first = encode(cfg, params, slice(batch, 0, 0, 1));
  Tensor second = encode(cfg, params, slice(batch, 0, 1, 1));
  for (Index j = 0; j < cfg.embed_dim; ++j) {
    CHECK(both.values()[j] == doctest::Approx(first.values()[j]).epsilon(1e-12));
    CHECK(both.values()[cfg.embed_dim + j] == doctest::Approx(second.values()[j]).epsilon(1e-12));
  }
}

TEST_CASE("projection logits are cosine similarities") {
  ViTConfig cfg = tiny_config();
  ParameterSet params = init_params(cfg, 41);
  Rng rng = Rng::from_seed(42);
  std::vector<double> rv(4 * cfg.embed_dim);
  for (double& v : rv) v = rng.normal();
  Tensor rep = Tensor::from_values({4, cfg.embed_dim}, rv);

  Tensor bn = head_bottleneck(cfg, params, rep);
  REQUIRE(bn.shape() == Shape{4, cfg.bottleneck_dim()});

  Tensor logits = project(cfg, params, rep);
  REQUIRE(logits.shape() == Shape{4, cfg.out_dim});
  // Unit bottleneck dotted with unit prototype rows: magnitude capped at one.
  CHECK(logits.values().abs().maxCoeff() <= 1.0 + 1e-12);

  // Rescaling prototype rows must not change the logits.
  ParameterSet scaled = clone_params(params, true);
  {
    Tensor& dir = scaled.at("head.wn.direction");
    Array v = dir.values();
    for (Index r = 0; r < cfg.out_dim; ++r) {
      v.segment(r * cfg.bottleneck_dim(), cfg.bottleneck_dim()) *= 0.5 + r;
    }
    dir = Tensor::param(dir.shape(), std::move(v));
  }
  Tensor logits2 = project(cfg, scaled, rep);
  for (Index i = 0; i < logits.size(); ++i) {
    CHECK(logits2.values()[i] == doctest::Approx(logits.values()[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(head_bottleneck(cfg, params, Tensor::zeros({4, cfg.embed_dim + 1})), ShapeError);
}

TEST_CASE("single-layer head projects the representation directly") {
  ViTConfig cfg = tiny_config();
  cfg.head_layers = 1;
  ParameterSet params = init_params(cfg, 51);
  CHECK(params.count("head.mlp.0.weight") == 0);
  CHECK(params.at("head.wn.direction").shape() == Shape{cfg.out_dim, cfg.embed_dim});

  Tensor rep = Tensor::from_values({1, cfg.embed_dim}, std::vector<double>(cfg.embed_dim, 0.25));
  Tensor bn = head_bottleneck(cfg, params, rep);
  CHECK(same_values(bn, rep));
  CHECK(project(cfg, params, rep).shape() == Shape{1, cfg.out_dim});
}

TEST_CASE("forward_logits gradients reach every parameter") {
  ViTConfig cfg = tiny_config();
  ParameterSet params = init_params(cfg, 61);
  Rng rng = Rng::from_seed(62);
  std::vector<double> px(2 * 3 * 8 * 8);
  for (double& v : px) v = rng.normal();

  Tensor loss = sum(forward_logits(cfg, params, Tensor::from_values({2, 3, 8, 8}, px)));
  backward(loss);
  for (const auto& [path, p] : params) {
    REQUIRE(p.has_grad());
    // Zero-init leaves still receive a gradient array; weights get signal.
    if (path == "patch_embed.weight") CHECK(p.grad().abs().maxCoeff() > 0.0);
  }
}
