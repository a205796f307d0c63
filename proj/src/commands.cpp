#include "dinomm/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "dinomm/checkpoint.hpp"
#include "dinomm/config.hpp"
#include "dinomm/data.hpp"
#include "dinomm/error.hpp"
#include "dinomm/eval.hpp"
#include "dinomm/gradcheck.hpp"
#include "dinomm/serial.hpp"
#include "dinomm/trainer.hpp"

namespace dinomm {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hex32(std::uint32_t v) {
  char buf[12];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(v));
  return buf;
}

ordered_json artifact_entry(const fs::path& dir, const std::string& name) {
  const std::vector<std::uint8_t> bytes = read_file_bytes((dir / name).string());
  ordered_json entry;
  entry["path"] = name;
  entry["bytes"] = bytes.size();
  entry["crc32"] = hex32(crc32_ieee(bytes.data(), bytes.size()));
  return entry;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  write_file_text(path.string(), j.dump(2) + "\n");
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list: '" + text + "'");
  return out;
}

std::string metric_line(const StepMetrics& m) {
  std::string line = "{\"step\":" + std::to_string(m.step);
  line += ",\"epoch\":" + std::to_string(m.epoch);
  line += ",\"loss\":" + format_json_double(m.loss);
  line += ",\"lr\":" + format_json_double(m.lr);
  line += ",\"tau_t\":" + format_json_double(m.tau_teacher);
  line += ",\"teacher_momentum\":" + format_json_double(m.teacher_momentum);
  line += ",\"teacher_entropy\":" + format_json_double(m.teacher_entropy);
  line += "}";
  return line;
}

// First-batch view records with pixels in a side file, so a dumped run can
// be audited without rerunning the augmentations.
void dump_views(const Dataset& data, const RunConfig& cfg, const fs::path& out_dir) {
  const ChannelStats stats = compute_channel_stats(data);
  const auto batches = epoch_batches(data.size(), cfg.train.batch_size, cfg.train.seed, 0);
  Dataset mini;
  mini.num_classes = data.num_classes;
  mini.c_total = data.c_total;
  mini.c_optical = data.c_optical;
  mini.width = data.width;
  mini.height = data.height;
  for (Index idx : batches.front()) mini.samples.push_back(data.samples[static_cast<std::size_t>(idx)]);
  normalize_in_place(mini, stats);

  std::ofstream meta(out_dir / "views.ndjson", std::ios::trunc);
  std::ofstream blob(out_dir / "views.f32", std::ios::binary | std::ios::trunc);
  if (!meta || !blob) throw IoError("cannot write view dump in " + out_dir.string());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < mini.samples.size(); ++i) {
    const MultimodalSample& sample = mini.samples[i];
    const auto views = make_views(sample.pixels, cfg.aug, view_stream(cfg.train.seed, 0, sample.id));
    for (std::size_t v = 0; v < views.size(); ++v) {
      const ViewRecord& rec = views[v];
      ordered_json j;
      j["sample"] = i;
      j["sample_id"] = sample.id;
      j["view"] = v;
      j["is_global"] = rec.is_global;
      j["drop"] = std::string(1, drop_mode_letter(rec.drop_mode));
      j["crop"] = {{"x", rec.crop.x}, {"y", rec.crop.y}, {"w", rec.crop.w}, {"h", rec.crop.h}};
      j["flipped"] = rec.flipped;
      j["rng_key"] = hex64(rec.rng_key);
      j["rng_draws"] = rec.rng_draws;
      j["shape"] = rec.image.shape();
      j["offset"] = offset;
      meta << j.dump() << "\n";
      const Array& vals = rec.image.values();
      for (Index p = 0; p < vals.size(); ++p) {
        const float f = static_cast<float>(vals[p]);
        blob.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
      offset += static_cast<std::uint64_t>(vals.size());
    }
  }
  if (!meta || !blob) throw IoError("short write while dumping views in " + out_dir.string());
}

void print_probe_table(const std::vector<EvalCell>& cells, const std::vector<std::string>& modalities,
                       const std::vector<double>& fractions, const std::string& tag) {
  std::map<std::pair<std::string, double>, double> grid;
  for (const EvalCell& c : cells) grid[{c.modality, c.label_fraction}] = c.map;
  std::printf("%-10s", tag.c_str());
  for (double f : fractions) std::printf("  %8s", (format_double(f * 100.0) + "%").c_str());
  std::printf("\n");
  for (const std::string& m : modalities) {
    std::printf("%-10s", m.c_str());
    for (double f : fractions) std::printf("  %8.4f", grid.at({m, f}));
    std::printf("\n");
  }
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args) {
  if (args.out_dir.empty()) throw ConfigError("gen-data: --out is required");
  if (args.n < 1 || args.n_test < 1) throw ConfigError("gen-data: sample counts must be >= 1");

  SynthConfig train_cfg;
  train_cfg.n = args.n;
  train_cfg.num_classes = args.classes;
  train_cfg.size = args.size;
  train_cfg.c_optical = args.optical_channels;
  train_cfg.c_sar = args.sar_channels;
  train_cfg.seed = args.seed;
  train_cfg.validate();

  SynthConfig test_cfg = train_cfg;
  test_cfg.n = args.n_test;
  test_cfg.seed = Rng::from_seed(args.seed).split(0x7e57).next_u64();

  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);
  save_dataset(generate_synthetic(train_cfg), (dir / "train.dmm").string());
  save_dataset(generate_synthetic(test_cfg), (dir / "test.dmm").string());

  ordered_json manifest;
  manifest["command"] = "gen-data";
  manifest["args"] = {{"n", args.n},
                      {"n_test", args.n_test},
                      {"classes", args.classes},
                      {"size", args.size},
                      {"optical_channels", args.optical_channels},
                      {"sar_channels", args.sar_channels},
                      {"seed", args.seed}};
  manifest["artifacts"] = {artifact_entry(dir, "train.dmm"), artifact_entry(dir, "test.dmm")};
  write_json_file(dir / "manifest.json", manifest);

  std::printf("gen-data: wrote %lld train + %lld test samples to %s\n", static_cast<long long>(args.n),
              static_cast<long long>(args.n_test), args.out_dir.c_str());
  return 0;
}

int cmd_pretrain(const PretrainArgs& args) {
  if (args.data_path.empty()) throw ConfigError("pretrain: --data is required");
  if (args.out_dir.empty()) throw ConfigError("pretrain: --out is required");

  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  for (const std::string& s : args.overrides) apply_override(cfg, s);
  if (args.mode == "s1-only") {
    cfg.aug.p_drop_sar = 0.0;
    cfg.aug.p_drop_optical = 1.0;
    cfg.aug.p_keep_both = 0.0;
  } else if (args.mode == "s2-only") {
    cfg.aug.p_drop_sar = 1.0;
    cfg.aug.p_drop_optical = 0.0;
    cfg.aug.p_keep_both = 0.0;
  } else if (args.mode != "mm") {
    throw ConfigError("pretrain: unknown --mode '" + args.mode + "', expected mm, s1-only or s2-only");
  }
  cfg.validate();

  Dataset data = load_dataset(args.data_path);
  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);

  ordered_json manifest;
  manifest["command"] = "pretrain";
  manifest["args"] = {{"data", args.data_path},
                      {"config", args.config_path},
                      {"resume", args.resume_path},
                      {"mode", args.mode},
                      {"dump_views", args.dump_views}};
  manifest["config_hash"] = hex64(config_hash(cfg));
  manifest["config"] = canonical_config_text(cfg);
  write_json_file(dir / "manifest.json", manifest);

  if (args.dump_views) dump_views(data, cfg, dir);

  Checkpoint resume_ckpt;
  const bool resuming = !args.resume_path.empty();
  if (resuming) resume_ckpt = load_checkpoint(args.resume_path);

  const Index spe = (data.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  std::ofstream metrics(dir / "metrics.ndjson", resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.ndjson").string());

  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    metrics << metric_line(m) << "\n";
    metrics.flush();
  };
  hooks.on_checkpoint = [&](const Checkpoint& c) {
    if (c.step == c.epochs_done * spe) {
      char name[40];
      std::snprintf(name, sizeof(name), "checkpoint_epoch%03lld.dmmc", static_cast<long long>(c.epochs_done));
      save_checkpoint(c, (dir / name).string());
    } else {
      save_checkpoint(c, (dir / "checkpoint_abort.dmmc").string());
    }
  };

  const TrainResult result = train(std::move(data), cfg, resuming ? &resume_ckpt : nullptr, hooks);
  save_checkpoint(result.checkpoint, (dir / "checkpoint.dmmc").string());

  manifest["artifacts"] = {artifact_entry(dir, "metrics.ndjson"), artifact_entry(dir, "checkpoint.dmmc")};
  write_json_file(dir / "manifest.json", manifest);

  std::printf("pretrain: %lld steps, %lld epochs done, checkpoint %s\n", static_cast<long long>(result.checkpoint.step),
              static_cast<long long>(result.checkpoint.epochs_done), (dir / "checkpoint.dmmc").c_str());
  return 0;
}

int cmd_probe(const ProbeArgs& args) {
  if (args.checkpoint_path.empty()) throw ConfigError("probe: --checkpoint is required (path or 'random')");
  if (args.train_path.empty() || args.test_path.empty()) throw ConfigError("probe: --train and --test are required");

  RunConfig cfg;
  ParameterSet encoder;
  std::string tag;
  if (args.checkpoint_path == "random") {
    cfg = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
    for (const std::string& s : args.overrides) apply_override(cfg, s);
    cfg.validate();
    encoder = init_params(cfg.vit, cfg.train.seed);
    tag = "random";
  } else {
    Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
    cfg = parse_run_config(ckpt.config_text);
    for (const std::string& s : args.overrides) {
      if (s.rfind("probe.", 0) != 0) {
        throw ConfigError("probe: only probe.* settings may be overridden when probing a checkpoint, got '" + s + "'");
      }
      apply_override(cfg, s);
    }
    cfg.validate();
    encoder = std::move(ckpt.teacher);
    tag = "pretrained";
  }

  std::vector<std::string> modality_names =
      split_csv(args.modalities.empty() ? cfg.probe.modality : args.modalities);
  std::vector<Modality> modalities;
  for (const std::string& name : modality_names) modalities.push_back(parse_modality(name));
  std::vector<double> fractions;
  if (args.fractions.empty()) {
    fractions.push_back(cfg.probe.label_fraction);
  } else {
    for (const std::string& f : split_csv(args.fractions)) {
      try {
        fractions.push_back(std::stod(f));
      } catch (const std::exception&) {
        throw ConfigError("probe: bad fraction '" + f + "'");
      }
    }
  }

  Dataset train = load_dataset(args.train_path);
  Dataset test = load_dataset(args.test_path);
  if (train.c_total != cfg.vit.in_channels) {
    throw ConfigError("probe: dataset has " + std::to_string(train.c_total) + " channels, encoder expects " +
                      std::to_string(cfg.vit.in_channels));
  }

  const std::vector<EvalCell> cells =
      run_probe_grid(cfg.vit, encoder, std::move(train), std::move(test), modalities, fractions, cfg.probe);

  ordered_json out;
  out["command"] = "probe";
  out["checkpoint"] = args.checkpoint_path;
  out["tag"] = tag;
  out["config_hash"] = hex64(config_hash(cfg));
  out["modalities"] = modality_names;
  out["fractions"] = fractions;
  ordered_json cell_list = ordered_json::array();
  for (const EvalCell& c : cells) {
    ordered_json jc;
    jc["modality"] = c.modality;
    jc["label_fraction"] = c.label_fraction;
    jc["n_train"] = c.n_train;
    jc["map"] = c.map;
    ordered_json per = ordered_json::array();
    for (double ap : c.per_class) {
      if (std::isnan(ap)) {
        per.push_back(nullptr);
      } else {
        per.push_back(ap);
      }
    }
    jc["per_class"] = per;
    cell_list.push_back(jc);
  }
  out["cells"] = cell_list;
  if (const fs::path parent = fs::path(args.out_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_json_file(args.out_path, out);

  print_probe_table(cells, modality_names, fractions, tag);
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& args) {
  if (args.seeds < 1) throw ConfigError("gradcheck: --seeds must be >= 1");
  if (args.tolerance < 0.0) throw ConfigError("gradcheck: --tolerance must be >= 0");

  const auto results = run_standard_grad_checks(args.seeds, args.tolerance);
  struct CaseSummary {
    double max_error{0};
    double tolerance{0};
    bool passed{true};
  };
  std::map<std::string, CaseSummary> by_case;
  for (const GradCheckResult& r : results) {
    CaseSummary& s = by_case[r.name];
    s.max_error = std::max(s.max_error, r.error);
    s.tolerance = r.tolerance;
    s.passed = s.passed && r.passed;
  }
  int failed = 0;
  for (const auto& [name, s] : by_case) {
    if (!s.passed) ++failed;
    std::printf("%s  %-28s max_rel_err=%.3e tol=%.0e\n", s.passed ? "PASS" : "FAIL", name.c_str(), s.max_error,
                s.tolerance);
  }
  std::printf("gradcheck: %zu cases x %d seeds, %d failed\n", by_case.size(), args.seeds, failed);
  return failed == 0 ? 0 : 1;
}

int cmd_report(const ReportArgs& args) {
  if (args.run_dir.empty()) throw ConfigError("report: --run is required");
  const fs::path dir(args.run_dir);
  if (!fs::is_directory(dir)) throw IoError("report: no such run directory: " + args.run_dir);

  ordered_json report;
  report["command"] = "report";
  bool found = false;

  if (fs::exists(dir / "manifest.json")) {
    const ordered_json manifest = ordered_json::parse(read_file_text((dir / "manifest.json").string()));
    report["manifest_command"] = manifest.value("command", std::string{});
    if (manifest.contains("config_hash")) report["config_hash"] = manifest["config_hash"];
    found = true;
  }

  if (fs::exists(dir / "metrics.ndjson")) {
    std::istringstream in(read_file_text((dir / "metrics.ndjson").string()));
    std::string line;
    ordered_json first, last;
    Index count = 0;
    double min_loss = 0.0;
    Index min_loss_step = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      last = ordered_json::parse(line);
      if (count == 0) first = last;
      const double loss = last.at("loss").get<double>();
      if (count == 0 || loss < min_loss) {
        min_loss = loss;
        min_loss_step = last.at("step").get<Index>();
      }
      ++count;
    }
    if (count == 0) throw FormatError("report: metrics.ndjson is empty");
    ordered_json t;
    t["steps"] = count;
    t["first_loss"] = first.at("loss");
    t["final_loss"] = last.at("loss");
    t["min_loss"] = min_loss;
    t["min_loss_step"] = min_loss_step;
    t["final_epoch"] = last.at("epoch");
    t["final_lr"] = last.at("lr");
    t["final_tau_t"] = last.at("tau_t");
    t["final_teacher_momentum"] = last.at("teacher_momentum");
    t["final_teacher_entropy"] = last.at("teacher_entropy");
    report["training"] = t;
    found = true;

    std::printf("training: %lld steps, loss %s -> %s (min %s at step %lld)\n", static_cast<long long>(count),
                format_double(first.at("loss").get<double>()).c_str(),
                format_double(last.at("loss").get<double>()).c_str(), format_double(min_loss).c_str(),
                static_cast<long long>(min_loss_step));
    std::printf("final: epoch %lld, lr %s, tau_t %s, teacher_momentum %s, teacher_entropy %s\n",
                static_cast<long long>(last.at("epoch").get<Index>()),
                format_double(last.at("lr").get<double>()).c_str(),
                format_double(last.at("tau_t").get<double>()).c_str(),
                format_double(last.at("teacher_momentum").get<double>()).c_str(),
                format_double(last.at("teacher_entropy").get<double>()).c_str());
  }

  if (fs::exists(dir / "probe_result.json")) {
    const ordered_json probe = ordered_json::parse(read_file_text((dir / "probe_result.json").string()));
    report["probe"] = probe;
    found = true;
    std::printf("probe (%s):\n", probe.value("tag", std::string{"?"}).c_str());
    for (const auto& cell : probe.at("cells")) {
      std::printf("  %-6s %6s%%  map=%.4f  n_train=%lld\n", cell.at("modality").get<std::string>().c_str(),
                  format_double(cell.at("label_fraction").get<double>() * 100.0).c_str(),
                  cell.at("map").get<double>(), static_cast<long long>(cell.at("n_train").get<Index>()));
    }
  }

  if (!found) throw IoError("report: " + args.run_dir + " has no manifest, metrics or probe result");
  write_json_file(dir / "report.json", report);
  return 0;
}

}  // namespace dinomm
