#include "dinomm/trainer.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dinomm/error.hpp"
#include "dinomm/optimizer.hpp"
#include "dinomm/parallel.hpp"

namespace dinomm {

namespace {

Tensor stack_records(const std::vector<std::vector<ViewRecord>>& views, Index first, Index count) {
  const Index b = static_cast<Index>(views.size());
  const Shape& img_shape = views.front()[static_cast<std::size_t>(first)].image.shape();
  const Index c = img_shape[0], s = img_shape[1];
  const Index per = c * s * s;
  Array out(count * b * per);
  for (Index v = 0; v < count; ++v) {
    for (Index i = 0; i < b; ++i) {
      const ViewRecord& rec = views[static_cast<std::size_t>(i)][static_cast<std::size_t>(first + v)];
      if (!shapes_equal(rec.image.shape(), img_shape)) {
        throw ShapeError("stack_views: view " + std::to_string(first + v) + " of sample " + std::to_string(i) +
                         " has shape " + shape_str(rec.image.shape()) + ", expected " + shape_str(img_shape));
      }
      out.segment((v * b + i) * per, per) = rec.image.values();
    }
  }
  return Tensor::from_data({count * b, c, s, s}, std::move(out));
}

}  // namespace

Tensor stack_views(const std::vector<std::vector<ViewRecord>>& views, bool globals) {
  if (views.empty()) throw ContractError("stack_views: empty batch");
  const Index total = static_cast<Index>(views.front().size());
  for (const auto& v : views) {
    if (static_cast<Index>(v.size()) != total) throw ContractError("stack_views: ragged view lists");
  }
  if (total < 2) throw ContractError("stack_views: need the two global views");
  if (globals) return stack_records(views, 0, 2);
  if (total == 2) throw ContractError("stack_views: no local views to stack");
  return stack_records(views, 2, total - 2);
}

TrainResult train(Dataset dataset, const RunConfig& cfg, const Checkpoint* resume, const TrainHooks& hooks) {
  cfg.validate();
  dataset.validate();
  if (dataset.c_total != cfg.vit.in_channels) {
    throw ConfigError("train: dataset has " + std::to_string(dataset.c_total) + " channels, config expects " +
                      std::to_string(cfg.vit.in_channels));
  }
  if (dataset.c_optical != cfg.aug.optical_channels) {
    throw ConfigError("train: dataset has " + std::to_string(dataset.c_optical) +
                      " optical channels, config expects " + std::to_string(cfg.aug.optical_channels));
  }

  const std::string config_text = canonical_config_text(cfg);
  const std::uint64_t cfg_hash = config_hash(cfg);
  const TrainConfig& tc = cfg.train;

  const Index n = dataset.size();
  const Index steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const Index total_steps = tc.epochs * steps_per_epoch;
  const Index warmup_steps = tc.warmup_epochs * steps_per_epoch;

  const ChannelStats stats = compute_channel_stats(dataset);
  normalize_in_place(dataset, stats);

  ParameterSet student, teacher;
  std::unique_ptr<AdamW> opt;
  Center center;
  center.momentum = tc.center_momentum;
  Index step = 0;
  Index start_epoch = 0;

  if (resume != nullptr) {
    if (resume->config_text != config_text) {
      throw ConfigError("train: resume config does not match:\n" + config_diff(resume->config_text, config_text));
    }
    if (resume->epochs_done > tc.epochs) {
      throw ConfigError("train: checkpoint has " + std::to_string(resume->epochs_done) +
                        " epochs done, config trains only " + std::to_string(tc.epochs));
    }
    if (resume->step != resume->epochs_done * steps_per_epoch) {
      throw FormatError("train: checkpoint is not at an epoch boundary");
    }
    if (resume->epochs_done == tc.epochs) return TrainResult{*resume, 0};
    student = clone_params(resume->student, true);
    teacher = clone_params(resume->teacher, false);
    opt = std::make_unique<AdamW>(student);
    opt->restore(resume->adam, resume->adam_t);
    center.value = Tensor::from_data({cfg.vit.out_dim}, resume->center);
    step = resume->step;
    start_epoch = resume->epochs_done;
  } else {
    student = init_params(cfg.vit, tc.seed);
    teacher = clone_params(student, false);
    opt = std::make_unique<AdamW>(student);
    center = make_center(cfg.vit.out_dim, tc.center_momentum, tc.center_init_first);
  }

  auto snapshot = [&](Index epochs_done) {
    Checkpoint c;
    c.config_text = config_text;
    c.config_hash = cfg_hash;
    c.seed = tc.seed;
    c.step = step;
    c.epochs_done = epochs_done;
    c.student = clone_params(student, true);
    c.teacher = clone_params(teacher, false);
    c.adam_t = opt->t();
    c.adam = opt->slots();
    c.center = center.value.values();
    return c;
  };

  const Index locals = cfg.aug.local_crop_count;
  Index steps_run = 0;

  for (Index epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const double tau_t =
        linear_then_constant(epoch, tc.tau_teacher_warmup_epochs, tc.tau_teacher_start, tc.tau_teacher_end);
    const Temperatures temps{tc.tau_student, tau_t};
    const auto batches = epoch_batches(n, tc.batch_size, tc.seed, epoch);

    for (const auto& batch : batches) {
      const double lr = warmup_cosine_lr(step, total_steps, warmup_steps, tc.base_lr, tc.final_lr);
      const double momentum = cosine_increase(step, total_steps, tc.teacher_momentum_start, tc.teacher_momentum_end);
      const Index b = static_cast<Index>(batch.size());

      std::vector<std::vector<ViewRecord>> views(batch.size());
      parallel_for(b, [&](Index lo, Index hi) {
        for (Index i = lo; i < hi; ++i) {
          const MultimodalSample& sample = dataset.samples[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])];
          views[static_cast<std::size_t>(i)] = make_views(sample.pixels, cfg.aug, view_stream(tc.seed, epoch, sample.id));
        }
      });

      const Tensor global_batch = stack_views(views, true);
      const Tensor teacher_logits = forward_logits(cfg.vit, teacher, global_batch);
      const Tensor student_global = forward_logits(cfg.vit, student, global_batch);

      std::vector<Tensor> teacher_views{slice(teacher_logits, 0, 0, b), slice(teacher_logits, 0, b, b)};
      std::vector<Tensor> student_views{slice(student_global, 0, 0, b), slice(student_global, 0, b, b)};
      if (locals > 0) {
        const Tensor student_local = forward_logits(cfg.vit, student, stack_views(views, false));
        for (Index v = 0; v < locals; ++v) student_views.push_back(slice(student_local, 0, v * b, b));
      }

      const Tensor loss = dino_loss(student_views, teacher_views, temps, center);
      const double loss_value = loss.item();
      const double entropy = mean_entropy(teacher_probs(teacher_logits, center, tau_t));

      if (!std::isfinite(loss_value)) {
        if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot(epoch));
        throw NumericError("train: non-finite loss at step " + std::to_string(step + 1));
      }

      clear_grads(student);
      backward(loss);
      opt->step(student, lr, tc.weight_decay);
      update_teacher(teacher, student, momentum);
      center = update_center(center, teacher_logits);

      ++step;
      ++steps_run;
      if (hooks.on_params) hooks.on_params(student, teacher);
      if (hooks.on_step) hooks.on_step({step, epoch, loss_value, lr, tau_t, momentum, entropy});
    }

    const Index done = epoch + 1;
    if (tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 && done < tc.epochs) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot(done));
    }
  }

  return TrainResult{snapshot(tc.epochs), steps_run};
}

}  // namespace dinomm
