#include "dinomm/schedules.hpp"

#include <cmath>

namespace dinomm {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_step(Index step, Index total_steps, const char* who) {
  if (total_steps < 1) throw ValueError(std::string(who) + ": total_steps must be >= 1");
  if (step < 0 || step >= total_steps) {
    throw ContractError(std::string(who) + ": step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
}
}  // namespace

double warmup_cosine_lr(Index step, Index total_steps, Index warmup_steps, double base,
                        double final_value) {
  check_step(step, total_steps, "warmup_cosine_lr");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw ValueError("warmup_cosine_lr: warmup_steps outside [0, total_steps]");
  }
  if (!(base > 0.0) || final_value < 0.0 || final_value > base) {
    throw ValueError("warmup_cosine_lr: need 0 <= final <= base with base > 0");
  }
  if (step < warmup_steps) {
    return base * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const Index span = total_steps - 1 - warmup_steps;
  const double t = span > 0 ? static_cast<double>(step - warmup_steps) / static_cast<double>(span) : 0.0;
  // Convex combination keeps both endpoints exact: w=1 at the warmup
  // boundary gives base, w=0 at the last step gives final_value.
  const double w = 0.5 * (1.0 + std::cos(kPi * t));
  return base * w + final_value * (1.0 - w);
}

double linear_then_constant(Index epoch, Index warmup_epochs, double start, double end) {
  if (epoch < 0) throw ValueError("linear_then_constant: epoch must be >= 0");
  if (warmup_epochs < 0) throw ValueError("linear_then_constant: warmup_epochs must be >= 0");
  if (warmup_epochs == 0 || epoch >= warmup_epochs) return end;
  return start + (end - start) * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
}

double cosine_increase(Index step, Index total_steps, double start, double end) {
  check_step(step, total_steps, "cosine_increase");
  const double t = total_steps > 1
                       ? static_cast<double>(step) / static_cast<double>(total_steps - 1)
                       : 1.0;
  return end - (end - start) * 0.5 * (1.0 + std::cos(kPi * t));
}

}  // namespace dinomm
