#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dinomm/tensor.hpp"

namespace dinomm {

// Compares the analytic gradient of scalar-valued f at x against central
// finite differences, returning max_i |a_i - d_i| / max(1, |a_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step = 1e-6);

struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<double(std::uint64_t seed)> run;  // returns max relative error
};

// One case per differentiable op (both broadcast sides where relevant) plus
// encoder+head+loss composites checked against input and a weight matrix.
const std::vector<GradCheckCase>& standard_grad_checks();

struct GradCheckResult {
  std::string name;
  std::uint64_t seed;
  double error;
  double tolerance;
  bool passed;
};

// Runs every standard case over seeds 0..num_seeds-1. tolerance_override > 0
// replaces each case's own threshold.
std::vector<GradCheckResult> run_standard_grad_checks(int num_seeds, double tolerance_override = 0.0);

}  // namespace dinomm
