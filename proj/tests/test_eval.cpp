#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dinomm/augment.hpp"
#include "dinomm/config.hpp"
#include "dinomm/data.hpp"
#include "dinomm/error.hpp"
#include "dinomm/eval.hpp"
#include "dinomm/rng.hpp"
#include "dinomm/tensor.hpp"
#include "dinomm/vit.hpp"

using namespace dinomm;

namespace {

ViTConfig probe_vit() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.in_channels = 5;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.head_hidden_dim = 16;
  cfg.head_layers = 2;
  cfg.out_dim = 16;
  return cfg;
}

Dataset probe_dataset(Index n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n = n;
  sc.num_classes = 3;
  sc.size = 8;
  sc.c_optical = 3;
  sc.c_sar = 2;
  sc.seed = seed;
  return generate_synthetic(sc);
}

}  // namespace

TEST_CASE("modality names round-trip") {
  CHECK(modality_name(Modality::sar) == "s1");
  CHECK(modality_name(Modality::optical) == "s2");
  CHECK(modality_name(Modality::joint) == "s1s2");
  CHECK(parse_modality("s1") == Modality::sar);
  CHECK(parse_modality("s2") == Modality::optical);
  CHECK(parse_modality("s1s2") == Modality::joint);
  CHECK_THROWS_AS(parse_modality("s3"), ConfigError);

  // Keeping a sensor means dropping the other block.
  CHECK(modality_drop(Modality::sar) == DropMode::sar_only);
  CHECK(modality_drop(Modality::optical) == DropMode::optical_only);
  CHECK(modality_drop(Modality::joint) == DropMode::both);
}

TEST_CASE("label_matrix mirrors the sample labels") {
  Dataset ds = probe_dataset(6, 3);
  Matrix labels = label_matrix(ds);
  REQUIRE(labels.rows() == 6);
  REQUIRE(labels.cols() == 3);
  for (Index i = 0; i < 6; ++i) {
    for (Index k = 0; k < 3; ++k) {
      CHECK(labels(i, k) == (ds.samples[static_cast<std::size_t>(i)].labels[static_cast<std::size_t>(k)] ? 1.0 : 0.0));
    }
    CHECK(labels.row(i).sum() >= 1.0);
  }
}

TEST_CASE("extract_features shapes and masking invariance") {
  ViTConfig cfg = probe_vit();
  ParameterSet params = init_params(cfg, 7);
  Dataset ds = probe_dataset(5, 8);

  Matrix feats = extract_features(cfg, params, ds, Modality::joint, 2);
  REQUIRE(feats.rows() == 5);
  REQUIRE(feats.cols() == cfg.embed_dim);
  CHECK(feats.allFinite());

  // The chunk size is an implementation detail of batching, not a result knob.
  Matrix feats_whole = extract_features(cfg, params, ds, Modality::joint, 64);
  CHECK(feats == feats_whole);

  // SAR-only features cannot see the optical block at all.
  Dataset scrambled = ds;
  const Index plane = ds.width * ds.height;
  for (MultimodalSample& s : scrambled.samples) {
    Array v = s.pixels.values();
    v.segment(0, ds.c_optical * plane) += 123.0;
    s.pixels = Tensor::from_data(s.pixels.shape(), std::move(v));
  }
  CHECK(extract_features(cfg, params, ds, Modality::sar) ==
        extract_features(cfg, params, scrambled, Modality::sar));
  CHECK(extract_features(cfg, params, ds, Modality::joint) !=
        extract_features(cfg, params, scrambled, Modality::joint));

  // Optical-only features are likewise blind to SAR perturbations.
  Dataset sar_scrambled = ds;
  for (MultimodalSample& s : sar_scrambled.samples) {
    Array v = s.pixels.values();
    v.segment(ds.c_optical * plane, ds.c_sar() * plane) -= 55.0;
    s.pixels = Tensor::from_data(s.pixels.shape(), std::move(v));
  }
  CHECK(extract_features(cfg, params, ds, Modality::optical) ==
        extract_features(cfg, params, sar_scrambled, Modality::optical));

  // Extraction works on a frozen clone and leaves the originals grad-free.
  for (const auto& [path, p] : params) CHECK_FALSE(p.has_grad());

  Dataset rect = ds;
  rect.width = 4;
  CHECK_THROWS_AS(extract_features(cfg, params, rect, Modality::joint), ConfigError);
  CHECK_THROWS_AS(extract_features(cfg, params, ds, Modality::joint, 0), ConfigError);
}

TEST_CASE("flatten_pixels masks and flattens") {
  Dataset ds = probe_dataset(3, 9);
  const Index per = ds.c_total * ds.width * ds.height;
  Matrix joint = flatten_pixels(ds, Modality::joint);
  REQUIRE(joint.rows() == 3);
  REQUIRE(joint.cols() == per);
  CHECK(joint(0, 0) == ds.samples[0].pixels.values()[0]);

  Matrix sar = flatten_pixels(ds, Modality::sar);
  const Index plane = ds.width * ds.height;
  for (Index j = 0; j < ds.c_optical * plane; ++j) CHECK(sar(0, j) == 0.0);
  CHECK(sar.row(0).segment(ds.c_optical * plane, ds.c_sar() * plane).cwiseAbs().sum() > 0.0);
}

TEST_CASE("stratified_subset picks a covering fraction") {
  // 64 rows, 8 classes, one positive each, 8 rows per class.
  const Index n = 64, k = 8;
  Matrix labels = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) labels(i, i % k) = 1.0;

  std::vector<Index> all = stratified_subset(labels, 1.0, 3);
  REQUIRE(static_cast<Index>(all.size()) == n);
  CHECK(all.front() == 0);
  CHECK(all.back() == n - 1);

  std::vector<Index> quarter = stratified_subset(labels, 0.25, 3);
  REQUIRE(static_cast<Index>(quarter.size()) == 16);
  CHECK(std::is_sorted(quarter.begin(), quarter.end()));
  std::set<Index> unique(quarter.begin(), quarter.end());
  CHECK(unique.size() == quarter.size());
  // Round-robin selection touches every class before repeating any.
  std::vector<Index> per_class(static_cast<std::size_t>(k), 0);
  for (Index row : quarter) per_class[static_cast<std::size_t>(row % k)]++;
  for (Index c = 0; c < k; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 2);

  CHECK(stratified_subset(labels, 0.25, 3) == quarter);
  CHECK(stratified_subset(labels, 0.25, 4) != quarter);

  // Rounding: 10 rows at 25% asks for llround(2.5) = 3 picks, and a tiny
  // fraction still keeps one row.
  Matrix small = Matrix::Ones(10, 1);
  CHECK(stratified_subset(small, 0.25, 1).size() == 3);
  CHECK(stratified_subset(small, 0.01, 1).size() == 1);

  CHECK_THROWS_AS(stratified_subset(labels, 0.0, 3), ConfigError);
  CHECK_THROWS_AS(stratified_subset(labels, 1.5, 3), ConfigError);
  CHECK_THROWS_AS(stratified_subset(Matrix::Zero(0, 2), 0.5, 3), ContractError);
}

TEST_CASE("soft_margin_loss hand values") {
  Matrix zeros = Matrix::Zero(4, 3);
  CHECK(soft_margin_loss(zeros, Matrix::Zero(4, 3)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Matrix scores(1, 2), labels(1, 2);
  scores << 1.0, -2.0;
  labels << 1.0, 0.0;
  const double want = (std::log1p(std::exp(-1.0)) + std::log1p(std::exp(-2.0))) / 2.0;
  CHECK(soft_margin_loss(scores, labels) == doctest::Approx(want).epsilon(1e-12));

  // The stable form survives scores far outside exp range.
  Matrix extreme(1, 2), lab2(1, 2);
  extreme << 800.0, -800.0;
  lab2 << 1.0, 0.0;
  CHECK(soft_margin_loss(extreme, lab2) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(soft_margin_loss(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), ShapeError);
}

TEST_CASE("train_probe separates a linear toy problem") {
  const Index n = 40;
  Matrix features(n, 1), labels(n, 1);
  for (Index i = 0; i < n; ++i) {
    features(i, 0) = i < n / 2 ? 1.0 : -1.0;
    labels(i, 0) = i < n / 2 ? 1.0 : 0.0;
  }
  ProbeConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.1;
  LinearProbe probe = train_probe(features, labels, cfg);
  Matrix scores = probe_scores(probe, features);
  CHECK(soft_margin_loss(scores, labels) < 0.1);
  CHECK(scores(0, 0) > 0.0);
  CHECK(scores(n - 1, 0) < 0.0);
  CHECK(mean_average_precision(scores, labels).map == doctest::Approx(1.0).epsilon(1e-12));

  // Same data, same config: the fit is deterministic.
  LinearProbe again = train_probe(features, labels, cfg);
  CHECK(probe.weight == again.weight);
  CHECK(probe.bias == again.bias);

  CHECK_THROWS_AS(train_probe(features, Matrix::Zero(n + 1, 1), cfg), ShapeError);
}

TEST_CASE("probe_scores is the affine map") {
  LinearProbe probe;
  probe.weight = Matrix(2, 1);
  probe.weight << 2.0, -1.0;
  probe.bias = Eigen::VectorXd(1);
  probe.bias << 0.5;
  Matrix features(1, 2);
  features << 1.0, 3.0;
  Matrix scores = probe_scores(probe, features);
  CHECK(scores(0, 0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK_THROWS_AS(probe_scores(probe, Matrix::Zero(1, 3)), ShapeError);
}

TEST_CASE("average precision hand cases") {
  // Ranked [+, -, +]: AP = (1/1 + 2/3) / 2 = 5/6.
  Matrix scores(3, 1), labels(3, 1);
  scores << 3.0, 2.0, 1.0;
  labels << 1.0, 0.0, 1.0;
  ApResult r = mean_average_precision(scores, labels);
  CHECK(r.map == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // A perfect ranking scores one.
  Matrix good(4, 1), glab(4, 1);
  good << 9.0, 8.0, 1.0, 0.5;
  glab << 1.0, 1.0, 0.0, 0.0;
  CHECK(mean_average_precision(good, glab).map == doctest::Approx(1.0).epsilon(1e-12));

  // Equal scores break ties by row order.
  Matrix tied = Matrix::Zero(2, 1);
  Matrix first(2, 1), second(2, 1);
  first << 1.0, 0.0;
  second << 0.0, 1.0;
  CHECK(mean_average_precision(tied, first).map == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_average_precision(tied, second).map == doctest::Approx(0.5).epsilon(1e-12));

  // Positive-free classes are reported as NaN and skipped in the mean.
  Matrix ms(2, 2), ml(2, 2);
  ms << 2.0, 2.0, 1.0, 1.0;
  ml << 1.0, 0.0, 0.0, 0.0;
  ApResult mixed = mean_average_precision(ms, ml);
  CHECK(mixed.per_class[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isnan(mixed.per_class[1]));
  CHECK(mixed.map == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(mean_average_precision(ms, Matrix::Zero(2, 2)), ValueError);
  CHECK_THROWS_AS(mean_average_precision(ms, Matrix::Zero(3, 2)), ShapeError);
}

TEST_CASE("average precision is permutation invariant without ties") {
  Rng rng = Rng::from_seed(19);
  const Index n = 200;
  Matrix scores(n, 1), labels(n, 1);
  for (Index i = 0; i < n; ++i) {
    scores(i, 0) = rng.normal();
    labels(i, 0) = rng.uniform() < 0.3 ? 1.0 : 0.0;
  }
  labels(0, 0) = 1.0;
  const double base = mean_average_precision(scores, labels).map;

  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  rng.shuffle(perm);
  Matrix ps(n, 1), pl(n, 1);
  for (Index i = 0; i < n; ++i) {
    ps(i, 0) = scores(perm[static_cast<std::size_t>(i)], 0);
    pl(i, 0) = labels(perm[static_cast<std::size_t>(i)], 0);
  }
  CHECK(mean_average_precision(ps, pl).map == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("random scores land near prevalence") {
  Rng rng = Rng::from_seed(23);
  const Index n = 10000;
  Matrix scores(n, 1), labels(n, 1);
  for (Index i = 0; i < n; ++i) {
    scores(i, 0) = rng.normal();
    labels(i, 0) = rng.uniform() < 0.3 ? 1.0 : 0.0;
  }
  const double prevalence = labels.col(0).sum() / static_cast<double>(n);
  const double ap = mean_average_precision(scores, labels).map;
  CHECK(ap == doctest::Approx(prevalence).epsilon(1).scale(0.05));
}

TEST_CASE("probe_cell subsets before fitting") {
  Rng rng = Rng::from_seed(29);
  const Index n = 80, f = 4, k = 2;
  Matrix train_x(n, f), train_y = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) {
    const Index c = i % k;
    train_y(i, c) = 1.0;
    for (Index j = 0; j < f; ++j) train_x(i, j) = rng.normal() + (c == 0 ? 2.0 : -2.0);
  }
  ProbeConfig cfg;
  cfg.epochs = 20;

  EvalCell half = probe_cell(train_x, train_y, train_x, train_y, 0.5, cfg);
  CHECK(half.n_train == 40);
  CHECK(half.label_fraction == 0.5);
  CHECK(half.map > 0.9);  // strongly separable either way
  REQUIRE(half.per_class.size() == 2);

  EvalCell again = probe_cell(train_x, train_y, train_x, train_y, 0.5, cfg);
  CHECK(half.map == again.map);
}

TEST_CASE("pixel probe grid learns the synthetic classes") {
  Dataset train = probe_dataset(96, 31);
  Dataset test = probe_dataset(48, 32);
  ProbeConfig cfg;
  cfg.epochs = 40;

  std::vector<EvalCell> cells = run_pixel_probe_grid(train, test, {Modality::joint, Modality::sar}, {1.0, 0.5}, cfg);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].modality == "s1s2");
  CHECK(cells[0].label_fraction == 1.0);
  CHECK(cells[0].n_train == 96);
  CHECK(cells[1].label_fraction == 0.5);
  CHECK(cells[1].n_train == 48);
  CHECK(cells[2].modality == "s1");

  // Class textures are phase-randomized, so a fixed linear pixel template
  // stays near chance; the grid only has to produce valid ranked scores.
  for (const EvalCell& cell : cells) {
    CHECK(cell.map > 0.0);
    CHECK(cell.map <= 1.0);
    REQUIRE(cell.per_class.size() == 3);
  }

  // The raw dataset is untouched by the grid's internal normalization.
  CHECK(train.samples[0].pixels.values()[0] ==
        probe_dataset(96, 31).samples[0].pixels.values()[0]);
}

TEST_CASE("encoder probe grid and single-cell evaluate") {
  ViTConfig vit = probe_vit();
  ParameterSet params = init_params(vit, 37);
  Dataset train = probe_dataset(48, 33);
  Dataset test = probe_dataset(24, 34);

  ProbeConfig cfg;
  cfg.epochs = 10;
  std::vector<EvalCell> cells = run_probe_grid(vit, params, train, test, {Modality::joint}, {1.0}, cfg);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].modality == "s1s2");
  CHECK(cells[0].n_train == 48);
  CHECK(cells[0].map > 0.0);
  CHECK(cells[0].map <= 1.0);

  cfg.modality = "s1";
  cfg.label_fraction = 0.5;
  EvalCell cell = evaluate(vit, params, train, test, cfg);
  CHECK(cell.modality == "s1");
  CHECK(cell.label_fraction == 0.5);
  CHECK(cell.n_train == 24);

  Dataset other = test;
  other.num_classes = 4;
  for (MultimodalSample& s : other.samples) s.labels.push_back(0);
  CHECK_THROWS_AS(run_probe_grid(vit, params, train, other, {Modality::joint}, {1.0}, cfg), ConfigError);
  CHECK_THROWS_AS(run_probe_grid(vit, params, train, test, {}, {1.0}, cfg), ConfigError);
}
