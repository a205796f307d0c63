#pragma once

#include <map>
#include <string>

#include "dinomm/vit.hpp"

namespace dinomm {

struct AdamWConfig {
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  void validate() const;
};

// AdamW with decoupled weight decay: decay multiplies the parameter before
// the moment update is applied, and only touches paths where decays() holds.
class AdamW {
 public:
  struct Slot {
    Array m, v;
  };

  explicit AdamW(const ParameterSet& params, AdamWConfig cfg = {});

  // Consumes the gradients currently on params. Every parameter must carry
  // one; a missing gradient means a wiring bug upstream.
  void step(ParameterSet& params, double lr, double weight_decay);

  Index t() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  void restore(std::map<std::string, Slot> slots, Index t);

  static void update(Array& value, const Array& grad, Array& m, Array& v, Index t, double lr,
                     double decay, const AdamWConfig& cfg);

 private:
  AdamWConfig cfg_;
  std::map<std::string, Slot> slots_;
  Index t_{0};
};

}  // namespace dinomm
