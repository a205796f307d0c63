#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dinomm/dino.hpp"
#include "dinomm/error.hpp"
#include "dinomm/rng.hpp"
#include "dinomm/tensor.hpp"
#include "dinomm/vit.hpp"

using namespace dinomm;

namespace {

Tensor random_logits(Index b, Index k, std::uint64_t seed) {
  Rng rng = Rng::from_seed(seed);
  std::vector<double> v(b * k);
  for (double& x : v) x = rng.normal();
  return Tensor::from_values({b, k}, v);
}

}  // namespace

TEST_CASE("make_center starts at zero with an optional first slot") {
  Center c = make_center(5, 0.9);
  REQUIRE(c.value.shape() == Shape{5});
  CHECK((c.value.values() == 0.0).all());
  CHECK(c.momentum == 0.9);

  Center biased = make_center(5, 1.0, -4.0);
  CHECK(biased.value.values()[0] == -4.0);
  CHECK(biased.value.values()[1] == 0.0);

  CHECK_THROWS_AS(make_center(0, 0.9), ValueError);
  CHECK_THROWS_AS(make_center(5, 1.5), ValueError);
}

TEST_CASE("teacher_probs sharpens the centered logits") {
  Center c = make_center(3, 0.9);
  Tensor logits = Tensor::from_values({1, 3}, {std::log(2.0), 0.0, 0.0});
  Tensor p = teacher_probs(logits, c, 1.0);
  CHECK(p.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(0.25).epsilon(1e-12));

  // Centering shifts are equivalent to shifting the logits themselves.
  Center shifted = make_center(3, 0.9);
  shifted.value = Tensor::from_values({3}, {std::log(2.0), 0.0, 0.0});
  Tensor q = teacher_probs(logits, shifted, 1.0);
  CHECK(q.values()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // A colder temperature concentrates mass on the argmax.
  Tensor sharp = teacher_probs(logits, c, 0.04);
  CHECK(sharp.values()[0] > 0.999);

  Tensor live = mul(Tensor::param({1, 3}, Array::Zero(3)), Tensor::scalar(1.0));
  CHECK_THROWS_AS(teacher_probs(live, c, 0.04), ContractError);
  CHECK_THROWS_AS(teacher_probs(Tensor::zeros({1, 4}), c, 0.04), ShapeError);
}

TEST_CASE("uniform student logits cost ln K against any teacher") {
  const Index b = 4, k = 32;
  Center c = make_center(k, 0.9);
  Temperatures temps;
  std::vector<Tensor> teacher = {random_logits(b, k, 1), random_logits(b, k, 2)};
  std::vector<Tensor> student = {Tensor::param({b, k}, Array::Zero(b * k)),
                                 Tensor::param({b, k}, Array::Zero(b * k)),
                                 Tensor::param({b, k}, Array::Zero(b * k))};
  Index pairs = 0;
  Tensor loss = dino_loss(student, teacher, temps, c, &pairs);
  // Each pair is H(P_t, uniform) = ln K regardless of the teacher rows.
  CHECK(loss.item() == doctest::Approx(std::log(double(k))).epsilon(1e-9));
  CHECK(pairs == 4);  // 2 teachers x 3 students, minus the 2 same-view pairs
}

TEST_CASE("dino_loss counts ordered cross pairs") {
  const Index b = 2, k = 8;
  Center c = make_center(k, 0.9);
  Temperatures temps;
  std::vector<Tensor> teacher, student;
  for (int t = 0; t < 2; ++t) teacher.push_back(random_logits(b, k, 10 + t));
  for (int s = 0; s < 10; ++s) {
    student.push_back(mul(Tensor::param({b, k}, random_logits(b, k, 20 + s).values()), Tensor::scalar(1.0)));
  }
  Index pairs = 0;
  Tensor loss = dino_loss(student, teacher, temps, c, &pairs);
  CHECK(pairs == 18);
  CHECK(std::isfinite(loss.item()));
  CHECK(loss.item() > 0.0);
}

TEST_CASE("dino_loss validates temperatures and view counts") {
  const Index b = 2, k = 4;
  Center c = make_center(k, 0.9);
  std::vector<Tensor> teacher = {random_logits(b, k, 1)};
  std::vector<Tensor> student = {Tensor::zeros({b, k}), Tensor::zeros({b, k})};

  Temperatures equal{0.1, 0.1};
  CHECK_THROWS_AS(dino_loss(student, teacher, equal, c), ValueError);
  Temperatures inverted{0.04, 0.1};
  CHECK_THROWS_AS(dino_loss(student, teacher, inverted, c), ValueError);
  Temperatures zero{0.1, 0.0};
  CHECK_THROWS_AS(dino_loss(student, teacher, zero, c), ValueError);

  Temperatures temps;
  CHECK_THROWS_AS(dino_loss({student[0]}, teacher, temps, c), ContractError);
  CHECK_THROWS_AS(dino_loss(student, {}, temps, c), ContractError);

  std::vector<Tensor> ragged = {Tensor::zeros({b, k}), Tensor::zeros({b + 1, k})};
  CHECK_THROWS_AS(dino_loss(ragged, teacher, temps, c), ShapeError);

  Tensor live = mul(Tensor::param({b, k}, Array::Zero(b * k)), Tensor::scalar(1.0));
  CHECK_THROWS_AS(dino_loss(student, {live}, temps, c), ContractError);
}

TEST_CASE("loss gradients flow to the student only") {
  const Index b = 3, k = 16;
  Center c = make_center(k, 0.9);
  Temperatures temps;

  std::vector<Tensor> student;
  for (int s = 0; s < 3; ++s) student.push_back(Tensor::param({b, k}, random_logits(b, k, 40 + s).values()));
  std::vector<Tensor> teacher = {random_logits(b, k, 50), random_logits(b, k, 51)};

  Tensor loss = dino_loss(student, teacher, temps, c);
  backward(loss);
  for (const Tensor& s : student) {
    REQUIRE(s.has_grad());
    CHECK(s.grad().abs().maxCoeff() > 0.0);
  }
  // Gradients of a softmax cross-entropy sum to zero across each row.
  for (const Tensor& s : student) {
    for (Index r = 0; r < b; ++r) {
      CHECK(s.grad().segment(r * k, k).sum() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("update_center blends in the batch mean") {
  Center c = make_center(2, 0.9);
  c.value = Tensor::from_values({2}, {1.0, -1.0});
  Tensor logits = Tensor::from_values({2, 2}, {2.0, 0.0, 4.0, -2.0});  // column means 3, -1

  Center next = update_center(c, logits);
  CHECK(next.value.values()[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 3.0).epsilon(1e-15));
  CHECK(next.value.values()[1] == doctest::Approx(0.9 * -1.0 + 0.1 * -1.0).epsilon(1e-15));
  CHECK(next.momentum == 0.9);

  // Momentum one freezes the center bitwise.
  Center frozen = make_center(2, 1.0, -4.0);
  Center still = update_center(frozen, logits);
  CHECK(still.value.values()[0] == -4.0);
  CHECK(still.value.values()[1] == 0.0);

  CHECK_THROWS_AS(update_center(c, Tensor::zeros({2, 3})), ShapeError);
  Tensor live = mul(Tensor::param({2, 2}, Array::Zero(4)), Tensor::scalar(1.0));
  CHECK_THROWS_AS(update_center(c, live), ContractError);
}

TEST_CASE("center converges geometrically to a constant batch mean") {
  const Index k = 4;
  Center c = make_center(k, 0.9);
  Tensor logits = Tensor::from_values({2, k}, {1, 2, 3, 4, 1, 2, 3, 4});
  double prev_gap = 1.0;
  for (int step = 0; step < 50; ++step) {
    c = update_center(c, logits);
    double gap = std::abs(c.value.values()[3] - 4.0);
    if (step > 0) CHECK(gap / prev_gap == doctest::Approx(0.9).epsilon(1e-12));
    prev_gap = gap;
  }
  CHECK(std::abs(c.value.values()[0] - 1.0) < 0.01);
}

TEST_CASE("update_teacher is an exponential moving average") {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.in_channels = 2;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.head_layers = 2;
  cfg.head_hidden_dim = 8;
  cfg.out_dim = 8;
  ParameterSet student = init_params(cfg, 71);
  ParameterSet teacher = clone_params(student, false);

  // lambda = 1 keeps the teacher fixed even when the student moves.
  ParameterSet moved = clone_params(student, true);
  for (auto& [path, p] : moved) {
    Array v = p.values();
    v += 1.0;
    p = Tensor::param(p.shape(), std::move(v));
  }
  ParameterSet held = clone_params(teacher, false);
  update_teacher(held, moved, 1.0);
  for (const auto& [path, p] : held) CHECK((p.values() == teacher.at(path).values()).all());

  // lambda = 0 copies the student outright.
  ParameterSet copied = clone_params(teacher, false);
  update_teacher(copied, moved, 0.0);
  for (const auto& [path, p] : copied) CHECK((p.values() == moved.at(path).values()).all());

  CHECK_THROWS_AS(update_teacher(copied, moved, 1.5), ValueError);
}

TEST_CASE("repeated EMA steps follow the closed form") {
  // Scalar view: t starts at 1, student stays 0, so t_n = 0.99^n.
  ParameterSet teacher, student;
  teacher["w"] = Tensor::from_values({1}, {1.0});
  student["w"] = Tensor::from_values({1}, {0.0});
  for (int i = 0; i < 100; ++i) update_teacher(teacher, student, 0.99);
  CHECK(teacher.at("w").values()[0] == doctest::Approx(0.36603234127322915).epsilon(1e-12));
}

TEST_CASE("update_teacher rejects mismatched sets") {
  ParameterSet teacher, student;
  teacher["a"] = Tensor::zeros({2});
  student["a"] = Tensor::zeros({2});
  student["b"] = Tensor::zeros({2});
  CHECK_THROWS_AS(update_teacher(teacher, student, 0.9), ContractError);

  ParameterSet renamed;
  renamed["c"] = Tensor::zeros({2});
  CHECK_THROWS_AS(update_teacher(teacher, renamed, 0.9), ContractError);

  ParameterSet wrong_shape;
  wrong_shape["a"] = Tensor::zeros({3});
  CHECK_THROWS_AS(update_teacher(teacher, wrong_shape, 0.9), ShapeError);
}

TEST_CASE("mean_entropy recovers known distributions") {
  const Index k = 8;
  Tensor uniform = Tensor::full({2, k}, 1.0 / k);
  CHECK(mean_entropy(uniform) == doctest::Approx(std::log(double(k))).epsilon(1e-12));

  Array onehot = Array::Zero(k);
  onehot[3] = 1.0;
  CHECK(mean_entropy(Tensor::from_data({1, k}, onehot)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  Array half = Array::Zero(k);
  half[0] = 0.5;
  half[1] = 0.5;
  CHECK(mean_entropy(Tensor::from_data({1, k}, half)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(mean_entropy(Tensor::zeros({8})), ShapeError);
}

TEST_CASE("teacher probabilities feed entropy consistently") {
  const Index b = 16, k = 64;
  Center c = make_center(k, 0.9);
  Tensor logits = random_logits(b, k, 90);
  double h = mean_entropy(teacher_probs(logits, c, 0.5));
  CHECK(h > 0.0);
  CHECK(h <= std::log(double(k)) + 1e-12);
  // Sharper temperature strictly reduces the entropy for non-constant rows.
  CHECK(mean_entropy(teacher_probs(logits, c, 0.05)) < h);
}
