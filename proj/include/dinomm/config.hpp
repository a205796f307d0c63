#pragma once

#include <cstdint>
#include <string>

#include "dinomm/augment.hpp"
#include "dinomm/vit.hpp"

namespace dinomm {

struct TrainConfig {
  Index epochs{20};
  Index batch_size{32};
  double base_lr{5e-4};
  double final_lr{1e-6};
  Index warmup_epochs{2};
  double weight_decay{0.04};
  double tau_student{0.1};
  double tau_teacher_start{0.04};
  double tau_teacher_end{0.07};
  Index tau_teacher_warmup_epochs{6};
  double center_momentum{0.9};
  // Seeds one center slot away from zero; with center_momentum 1 this holds
  // a frozen asymmetric center, used by the no-centering ablation.
  double center_init_first{0.0};
  double teacher_momentum_start{0.996};
  double teacher_momentum_end{1.0};
  std::uint64_t seed{0};
  Index checkpoint_every{0};  // epochs between mid-run checkpoints; 0 = end only
  void validate() const;
};

struct ProbeConfig {
  Index epochs{100};
  Index batch_size{64};
  double lr{0.01};
  double momentum{0.9};
  double label_fraction{1.0};     // stratified share of probe training labels
  std::string modality{"s1s2"};  // s1, s2 or s1s2
  std::uint64_t seed{0};
  void validate() const;
};

// Everything a run needs; a parsed file plus overrides resolves to one of
// these, and its canonical text is what checkpoints fingerprint.
struct RunConfig {
  ViTConfig vit;
  AugConfig aug;
  TrainConfig train;
  ProbeConfig probe;
  void validate() const;
};

// key = value lines, # comments, later keys win. Unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& assignment);  // "key=value"

// Sorted key = value dump; doubles at 17 significant digits so the text
// round-trips bit-exactly.
std::string canonical_config_text(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// Human-oriented key-by-key comparison, empty when equal.
std::string config_diff(const std::string& text_a, const std::string& text_b);

std::string format_double(double v);
std::string format_json_double(double v);

}  // namespace dinomm
