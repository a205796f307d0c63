#pragma once

#include <functional>

#include "dinomm/augment.hpp"
#include "dinomm/checkpoint.hpp"
#include "dinomm/config.hpp"
#include "dinomm/data.hpp"
#include "dinomm/dino.hpp"
#include "dinomm/schedules.hpp"

namespace dinomm {

struct StepMetrics {
  Index step{0};   // steps completed, so the first line reads 1
  Index epoch{0};  // epoch this step belongs to
  double loss{0};
  double lr{0};
  double tau_teacher{0};
  double teacher_momentum{0};
  double teacher_entropy{0};
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  // Fired at checkpoint_every boundaries and right before a non-finite-loss
  // abort; the final checkpoint is returned, not hooked.
  std::function<void(const Checkpoint&)> on_checkpoint;
  // Post-update parameter state each step, for replay and trace tests.
  std::function<void(const ParameterSet& student, const ParameterSet& teacher)> on_params;
};

struct TrainResult {
  Checkpoint checkpoint;
  Index steps_run{0};
};

// Stacks one view across the batch: rows [v*B, (v+1)*B) of the result hold
// view v of every sample. globals selects views 0..1, otherwise the locals.
Tensor stack_views(const std::vector<std::vector<ViewRecord>>& views, bool globals);

// Self-distillation training over the raw dataset (normalized in place with
// its own stats). A resume checkpoint must carry the identical canonical
// config text and sit on an epoch boundary; continuation is then bit-exact
// with an uninterrupted run.
TrainResult train(Dataset dataset, const RunConfig& cfg, const Checkpoint* resume = nullptr,
                  const TrainHooks& hooks = {});

}  // namespace dinomm
