#include "dinomm/dino.hpp"

#include <cmath>

namespace dinomm {

Center make_center(Index out_dim, double momentum, double first_slot) {
  if (out_dim < 1) throw ValueError("center: out_dim must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ValueError("center: momentum must be in [0, 1]");
  Array v = Array::Zero(out_dim);
  v[0] = first_slot;
  return Center{Tensor::from_data({out_dim}, std::move(v)), momentum};
}

Tensor teacher_probs(const Tensor& logits, const Center& center, double tau_teacher) {
  if (logits.requires_grad()) {
    throw ContractError("teacher_probs: teacher logits must be detached from the graph");
  }
  if (logits.ndim() != 2 || logits.dim(1) != center.value.size()) {
    throw ShapeError("teacher_probs: logits " + shape_str(logits.shape()) + " vs center " +
                     shape_str(center.value.shape()));
  }
  return softmax(sub(logits, reshape(center.value, {1, center.value.size()})), tau_teacher, -1);
}

Tensor dino_loss(const std::vector<Tensor>& student_logits, const std::vector<Tensor>& teacher_logits,
                 const Temperatures& temps, const Center& center, Index* pair_count) {
  if (!(temps.student > 0.0) || !(temps.teacher > 0.0)) {
    throw ValueError("dino_loss: temperatures must be positive");
  }
  if (!(temps.teacher < temps.student)) {
    throw ValueError("dino_loss: teacher temperature " + std::to_string(temps.teacher) +
                     " must be below student temperature " + std::to_string(temps.student));
  }
  const std::size_t g = teacher_logits.size();
  const std::size_t v = student_logits.size();
  if (g == 0 || v < 2 || g > v) {
    throw ContractError("dino_loss: need at least one teacher view and two student views");
  }
  Tensor total;
  Index pairs = 0;
  for (std::size_t t = 0; t < g; ++t) {
    const Tensor pt = teacher_probs(teacher_logits[t], center, temps.teacher);
    for (std::size_t s = 0; s < v; ++s) {
      if (s == t) continue;
      const Tensor logp = log_softmax(student_logits[s], temps.student, -1);
      if (logp.shape() != pt.shape()) {
        throw ShapeError("dino_loss: view logits disagree: " + shape_str(pt.shape()) + " vs " +
                         shape_str(logp.shape()));
      }
      const Tensor ce = neg(mean(sum(mul(pt, logp), 1)));
      total = total.defined() ? add(total, ce) : ce;
      ++pairs;
    }
  }
  if (pair_count) *pair_count = pairs;
  return scale(total, 1.0 / static_cast<double>(pairs));
}

Center update_center(const Center& center, const Tensor& teacher_logits) {
  if (teacher_logits.requires_grad()) {
    throw ContractError("update_center: teacher logits must be detached from the graph");
  }
  const Index k = center.value.size();
  if (teacher_logits.ndim() != 2 || teacher_logits.dim(1) != k) {
    throw ShapeError("update_center: logits " + shape_str(teacher_logits.shape()) + " vs center of size " +
                     std::to_string(k));
  }
  const Index rows = teacher_logits.dim(0);
  const Array& v = teacher_logits.values();
  Array colmean = Array::Zero(k);
  for (Index r = 0; r < rows; ++r) colmean += v.segment(r * k, k);
  colmean /= static_cast<double>(rows);
  Array next = center.momentum * center.value.values() + (1.0 - center.momentum) * colmean;
  return Center{Tensor::from_data({k}, std::move(next)), center.momentum};
}

void update_teacher(ParameterSet& teacher, const ParameterSet& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValueError("update_teacher: momentum " + std::to_string(lambda) + " outside [0, 1]");
  }
  if (teacher.size() != student.size()) {
    throw ContractError("update_teacher: parameter sets differ in size");
  }
  auto ti = teacher.begin();
  auto si = student.begin();
  for (; ti != teacher.end(); ++ti, ++si) {
    if (ti->first != si->first) throw ContractError("update_teacher: parameter name mismatch at " + ti->first);
    if (ti->second.shape() != si->second.shape()) {
      throw ShapeError("update_teacher: shape mismatch at " + ti->first);
    }
    Array& tv = ti->second.values_mut();
    tv = lambda * tv + (1.0 - lambda) * si->second.values();
  }
}

double mean_entropy(const Tensor& probs) {
  if (probs.ndim() != 2) throw ShapeError("mean_entropy: expected [B, K], got " + shape_str(probs.shape()));
  const Array& v = probs.values();
  double total = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) total -= v[i] * std::log(v[i]);
  }
  return total / static_cast<double>(probs.dim(0));
}

}  // namespace dinomm
