#include "dinomm/optimizer.hpp"

#include <cmath>

namespace dinomm {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValueError("adamw: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValueError("adamw: eps must be positive");
}

AdamW::AdamW(const ParameterSet& params, AdamWConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& [path, t] : params) {
    slots_[path] = Slot{Array::Zero(t.size()), Array::Zero(t.size())};
  }
}

void AdamW::update(Array& value, const Array& grad, Array& m, Array& v, Index t, double lr,
                   double decay, const AdamWConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.square();
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double vc = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  if (decay != 0.0) value *= 1.0 - lr * decay;
  value -= lr * (m / mc) / ((v / vc).sqrt() + cfg.eps);
}

void AdamW::step(ParameterSet& params, double lr, double weight_decay) {
  if (!(lr >= 0.0)) throw ValueError("adamw: lr must be >= 0");
  if (weight_decay < 0.0) throw ValueError("adamw: weight_decay must be >= 0");
  if (params.size() != slots_.size()) {
    throw ContractError("adamw: parameter set changed size since construction");
  }
  ++t_;
  auto si = slots_.begin();
  for (auto pi = params.begin(); pi != params.end(); ++pi, ++si) {
    if (pi->first != si->first) throw ContractError("adamw: parameter name mismatch at " + pi->first);
    if (!pi->second.has_grad()) throw ContractError("adamw: no gradient for " + pi->first);
    const double decay = decays(pi->first) ? weight_decay : 0.0;
    update(pi->second.values_mut(), pi->second.grad(), si->second.m, si->second.v, t_, lr, decay, cfg_);
  }
}

void AdamW::restore(std::map<std::string, Slot> slots, Index t) {
  if (t < 0) throw ValueError("adamw: negative step count");
  if (slots.size() != slots_.size()) throw ContractError("adamw: restored slot set differs in size");
  auto a = slots.begin();
  auto b = slots_.begin();
  for (; a != slots.end(); ++a, ++b) {
    if (a->first != b->first) throw ContractError("adamw: restored slot name mismatch at " + a->first);
    if (a->second.m.size() != b->second.m.size() || a->second.v.size() != b->second.v.size()) {
      throw ContractError("adamw: restored slot shape mismatch at " + a->first);
    }
  }
  slots_ = std::move(slots);
  t_ = t;
}

}  // namespace dinomm
