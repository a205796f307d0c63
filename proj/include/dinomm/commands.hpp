#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dinomm/tensor.hpp"

namespace dinomm {

struct GenDataArgs {
  Index n{2000};
  Index n_test{500};
  Index classes{8};
  Index size{64};
  Index optical_channels{12};
  Index sar_channels{2};
  std::uint64_t seed{0};
  std::string out_dir;
};

struct PretrainArgs {
  std::string config_path;  // empty: built-in defaults
  std::string data_path;
  std::string out_dir;
  std::string resume_path;  // empty: fresh run
  std::string mode{"mm"};   // mm, s1-only, s2-only
  std::vector<std::string> overrides;
  bool dump_views{false};
};

struct ProbeArgs {
  std::string checkpoint_path;  // file path, or "random" for a fresh init
  std::string config_path;      // used only with "random"
  std::string train_path;
  std::string test_path;
  std::string out_path{"probe_result.json"};
  std::string modalities;  // comma list; empty: the config's probe.modality
  std::string fractions;   // comma list; empty: the config's probe.label_fraction
  std::vector<std::string> overrides;
};

struct GradcheckArgs {
  int seeds{10};
  double tolerance{0.0};  // 0: each case's own threshold
};

struct ReportArgs {
  std::string run_dir;
};

// Each command returns a process exit code: 0 on success. Config and usage
// problems throw ConfigError (exit 2 at the CLI boundary), runtime failures
// throw other errors (exit 1).
int cmd_gen_data(const GenDataArgs& args);
int cmd_pretrain(const PretrainArgs& args);
int cmd_probe(const ProbeArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_report(const ReportArgs& args);

}  // namespace dinomm
