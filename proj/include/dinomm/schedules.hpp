#pragma once

#include "dinomm/tensor.hpp"

namespace dinomm {

// Linear ramp 0 -> base over the first warmup_steps steps (value base is
// first reached at step == warmup_steps), then cosine decay so the final
// step lands exactly on final_value.
double warmup_cosine_lr(Index step, Index total_steps, Index warmup_steps, double base,
                        double final_value);

// Linear ramp start -> end over warmup_epochs, constant end afterwards.
double linear_then_constant(Index epoch, Index warmup_epochs, double start, double end);

// Half-cosine from start at step 0 to end at the final step.
double cosine_increase(Index step, Index total_steps, double start, double end);

}  // namespace dinomm
