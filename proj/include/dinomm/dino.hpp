#pragma once

#include <vector>

#include "dinomm/tensor.hpp"
#include "dinomm/vit.hpp"

namespace dinomm {

// Running estimate of the mean teacher logit, subtracted before the teacher
// softmax to keep one output from dominating.
struct Center {
  Tensor value;  // [K], no grad
  double momentum{0.9};
};

Center make_center(Index out_dim, double momentum, double first_slot = 0.0);

struct Temperatures {
  double student{0.1};
  double teacher{0.04};
};

// Sharpened, centered teacher distribution: softmax((z - c) / tau_teacher).
// Logits must be detached; a grad-carrying input is a contract violation.
Tensor teacher_probs(const Tensor& logits, const Center& center, double tau_teacher);

// Mean over ordered (teacher view t, student view s) pairs with s != t of
// the batch-mean cross-entropy H(P_t, P_s). teacher_logits line up with the
// first teacher_logits.size() student views (the global crops).
Tensor dino_loss(const std::vector<Tensor>& student_logits, const std::vector<Tensor>& teacher_logits,
                 const Temperatures& temps, const Center& center, Index* pair_count = nullptr);

// c' = m*c + (1-m) * batch mean of raw (uncentered) teacher logits.
Center update_center(const Center& center, const Tensor& teacher_logits);

// Teacher parameters move toward the student: t = lambda*t + (1-lambda)*s.
void update_teacher(ParameterSet& teacher, const ParameterSet& student, double lambda);

// Mean row entropy of a [B, K] probability table, in nats.
double mean_entropy(const Tensor& probs);

}  // namespace dinomm
