#include <cstdio>
#include <exception>

#include "CLI11.hpp"

#include "dinomm/commands.hpp"
#include "dinomm/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"joint SAR-optical self-distillation at desk scale"};
  app.require_subcommand(1);

  dinomm::GenDataArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen-data", "write synthetic train/test dataset files");
  c_gen->add_option("--n", gen.n, "training samples");
  c_gen->add_option("--n-test", gen.n_test, "test samples");
  c_gen->add_option("--classes", gen.classes, "label classes");
  c_gen->add_option("--size", gen.size, "scene height and width");
  c_gen->add_option("--optical-channels", gen.optical_channels, "optical channel count");
  c_gen->add_option("--sar-channels", gen.sar_channels, "SAR channel count");
  c_gen->add_option("--seed", gen.seed, "generator seed");
  c_gen->add_option("--out", gen.out_dir, "output directory")->required();

  dinomm::PretrainArgs pre;
  CLI::App* c_pre = app.add_subcommand("pretrain", "self-distillation pre-training");
  c_pre->add_option("--config", pre.config_path, "config file (key = value lines)");
  c_pre->add_option("--data", pre.data_path, "training dataset file")->required();
  c_pre->add_option("--out", pre.out_dir, "run output directory")->required();
  c_pre->add_option("--resume", pre.resume_path, "checkpoint to continue from");
  c_pre->add_option("--mode", pre.mode, "mm, s1-only or s2-only");
  c_pre->add_option("--set", pre.overrides, "config override key=value (repeatable)");
  c_pre->add_flag("--dump-views", pre.dump_views, "write the first batch's augmented views");

  dinomm::ProbeArgs probe;
  CLI::App* c_probe = app.add_subcommand("probe", "linear-probe a frozen encoder");
  c_probe->add_option("--checkpoint", probe.checkpoint_path, "checkpoint file, or 'random'")->required();
  c_probe->add_option("--config", probe.config_path, "config file, used with --checkpoint random");
  c_probe->add_option("--train", probe.train_path, "probe training dataset")->required();
  c_probe->add_option("--test", probe.test_path, "probe test dataset")->required();
  c_probe->add_option("--out", probe.out_path, "result JSON path");
  c_probe->add_option("--modalities", probe.modalities, "comma list of s1, s2, s1s2");
  c_probe->add_option("--fractions", probe.fractions, "comma list of label fractions in (0, 1]");
  c_probe->add_option("--set", probe.overrides, "config override key=value (repeatable)");

  dinomm::GradcheckArgs grad;
  CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  c_grad->add_option("--seeds", grad.seeds, "seeds per case");
  c_grad->add_option("--tolerance", grad.tolerance, "override per-case tolerance");

  dinomm::ReportArgs rep;
  CLI::App* c_rep = app.add_subcommand("report", "summarize a run directory");
  c_rep->add_option("--run", rep.run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_gen->parsed()) return dinomm::cmd_gen_data(gen);
    if (c_pre->parsed()) return dinomm::cmd_pretrain(pre);
    if (c_probe->parsed()) return dinomm::cmd_probe(probe);
    if (c_grad->parsed()) return dinomm::cmd_gradcheck(grad);
    if (c_rep->parsed()) return dinomm::cmd_report(rep);
  } catch (const dinomm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
