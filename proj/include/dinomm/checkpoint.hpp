#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dinomm/optimizer.hpp"
#include "dinomm/vit.hpp"

namespace dinomm {

// Full training state: enough to continue a run bit-exactly from an epoch
// boundary. config_text is the canonical resolved config; its hash guards
// resumes against mismatched settings.
struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash{0};
  std::uint64_t seed{0};
  Index step{0};         // optimizer steps completed
  Index epochs_done{0};  // full epochs completed
  ParameterSet student;  // grad-carrying leaves
  ParameterSet teacher;  // plain values
  Index adam_t{0};
  std::map<std::string, AdamW::Slot> adam;
  Array center;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dinomm
