#include "dinomm/config.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "dinomm/serial.hpp"

namespace dinomm {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
  if (!(final_lr >= 0.0 && final_lr <= base_lr)) throw ConfigError("train: need 0 <= final_lr <= base_lr");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("train: warmup_epochs outside [0, epochs]");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(tau_student > 0.0) || !(tau_teacher_start > 0.0) || !(tau_teacher_end > 0.0)) {
    throw ConfigError("train: temperatures must be positive");
  }
  if (!(tau_teacher_start < tau_student) || !(tau_teacher_end < tau_student)) {
    throw ConfigError("train: teacher temperature must stay below student temperature");
  }
  if (tau_teacher_warmup_epochs < 0) throw ConfigError("train: tau_teacher_warmup_epochs must be >= 0");
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) {
    throw ConfigError("train: center_momentum must be in [0, 1]");
  }
  if (!(teacher_momentum_start >= 0.0 && teacher_momentum_start <= 1.0) ||
      !(teacher_momentum_end >= 0.0 && teacher_momentum_end <= 1.0) ||
      teacher_momentum_start > teacher_momentum_end) {
    throw ConfigError("train: teacher momentum range must be inside [0, 1] and nondecreasing");
  }
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
}

void ProbeConfig::validate() const {
  if (epochs < 1) throw ConfigError("probe: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("probe: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("probe: momentum must be in [0, 1)");
  if (!(label_fraction > 0.0) || label_fraction > 1.0) {
    throw ConfigError("probe: label_fraction must be in (0, 1]");
  }
  if (modality != "s1" && modality != "s2" && modality != "s1s2") {
    throw ConfigError("probe: modality must be s1, s2 or s1s2, got '" + modality + "'");
  }
}

void RunConfig::validate() const {
  vit.validate();
  aug.validate();
  train.validate();
  probe.validate();
  if (aug.total_channels() != vit.in_channels) {
    throw ConfigError("config: aug channels " + std::to_string(aug.total_channels()) +
                      " do not match vit.in_channels " + std::to_string(vit.in_channels));
  }
  if (aug.global_crop_size != vit.image_size) {
    throw ConfigError("config: global crop " + std::to_string(aug.global_crop_size) +
                      " must equal vit.image_size " + std::to_string(vit.image_size));
  }
  if (aug.local_crop_size % vit.patch_size != 0) {
    throw ConfigError("config: local crop " + std::to_string(aug.local_crop_size) +
                      " not divisible by patch " + std::to_string(vit.patch_size));
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_json_double(double v) {
  std::string s = format_double(v);
  // Bare integers would round-trip as a different JSON type.
  if (s.find_first_of(".eE") == std::string::npos && s != "inf" && s != "-inf" && s != "nan") s += ".0";
  return s;
}

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

Index parse_index(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(raw, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + raw + "'");
  }
  if (used != raw.size()) throw ConfigError("config: bad integer for " + key + ": '" + raw + "'");
  return static_cast<Index>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(raw, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + raw + "'");
  }
  if (used != raw.size()) throw ConfigError("config: bad unsigned integer for " + key + ": '" + raw + "'");
  return static_cast<std::uint64_t>(v);
}

double parse_double(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + raw + "'");
  }
  if (used != raw.size()) throw ConfigError("config: bad number for " + key + ": '" + raw + "'");
  return v;
}

template <class Access>
Field index_field(std::string key, Access access) {
  return Field{key,
               [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
               [access, key](RunConfig& c, const std::string& raw) { access(c) = parse_index(key, raw); }};
}

template <class Access>
Field double_field(std::string key, Access access) {
  return Field{key,
               [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); },
               [access, key](RunConfig& c, const std::string& raw) { access(c) = parse_double(key, raw); }};
}

template <class Access>
Field u64_field(std::string key, Access access) {
  return Field{key,
               [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
               [access, key](RunConfig& c, const std::string& raw) { access(c) = parse_u64(key, raw); }};
}

template <class Access>
Field string_field(std::string key, Access access) {
  return Field{key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
               [access](RunConfig& c, const std::string& raw) { access(c) = raw; }};
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  auto I = [&](const char* k, auto a) { f.push_back(index_field(k, a)); };
  auto D = [&](const char* k, auto a) { f.push_back(double_field(k, a)); };
  auto U = [&](const char* k, auto a) { f.push_back(u64_field(k, a)); };

  I("vit.image_size", [](RunConfig& c) -> Index& { return c.vit.image_size; });
  I("vit.patch_size", [](RunConfig& c) -> Index& { return c.vit.patch_size; });
  I("vit.in_channels", [](RunConfig& c) -> Index& { return c.vit.in_channels; });
  I("vit.embed_dim", [](RunConfig& c) -> Index& { return c.vit.embed_dim; });
  I("vit.depth", [](RunConfig& c) -> Index& { return c.vit.depth; });
  I("vit.num_heads", [](RunConfig& c) -> Index& { return c.vit.num_heads; });
  D("vit.mlp_ratio", [](RunConfig& c) -> double& { return c.vit.mlp_ratio; });
  I("vit.head_hidden_dim", [](RunConfig& c) -> Index& { return c.vit.head_hidden_dim; });
  I("vit.head_layers", [](RunConfig& c) -> Index& { return c.vit.head_layers; });
  I("vit.out_dim", [](RunConfig& c) -> Index& { return c.vit.out_dim; });
  D("vit.norm_eps", [](RunConfig& c) -> double& { return c.vit.norm_eps; });

  I("aug.global_crop_size", [](RunConfig& c) -> Index& { return c.aug.global_crop_size; });
  I("aug.local_crop_size", [](RunConfig& c) -> Index& { return c.aug.local_crop_size; });
  I("aug.local_crop_count", [](RunConfig& c) -> Index& { return c.aug.local_crop_count; });
  D("aug.global_scale_lo", [](RunConfig& c) -> double& { return c.aug.global_scale_lo; });
  D("aug.global_scale_hi", [](RunConfig& c) -> double& { return c.aug.global_scale_hi; });
  D("aug.local_scale_lo", [](RunConfig& c) -> double& { return c.aug.local_scale_lo; });
  D("aug.local_scale_hi", [](RunConfig& c) -> double& { return c.aug.local_scale_hi; });
  D("aug.aspect_lo", [](RunConfig& c) -> double& { return c.aug.aspect_lo; });
  D("aug.aspect_hi", [](RunConfig& c) -> double& { return c.aug.aspect_hi; });
  D("aug.hflip_prob", [](RunConfig& c) -> double& { return c.aug.hflip_prob; });
  D("aug.jitter_prob", [](RunConfig& c) -> double& { return c.aug.jitter_prob; });
  D("aug.jitter_strength", [](RunConfig& c) -> double& { return c.aug.jitter_strength; });
  D("aug.grayscale_prob", [](RunConfig& c) -> double& { return c.aug.grayscale_prob; });
  D("aug.blur_prob", [](RunConfig& c) -> double& { return c.aug.blur_prob; });
  D("aug.blur_sigma_lo", [](RunConfig& c) -> double& { return c.aug.blur_sigma_lo; });
  D("aug.blur_sigma_hi", [](RunConfig& c) -> double& { return c.aug.blur_sigma_hi; });
  D("aug.solarize_prob", [](RunConfig& c) -> double& { return c.aug.solarize_prob; });
  D("aug.solarize_threshold", [](RunConfig& c) -> double& { return c.aug.solarize_threshold; });
  D("aug.p_drop_sar", [](RunConfig& c) -> double& { return c.aug.p_drop_sar; });
  D("aug.p_drop_optical", [](RunConfig& c) -> double& { return c.aug.p_drop_optical; });
  D("aug.p_keep_both", [](RunConfig& c) -> double& { return c.aug.p_keep_both; });
  I("aug.optical_channels", [](RunConfig& c) -> Index& { return c.aug.optical_channels; });
  I("aug.sar_channels", [](RunConfig& c) -> Index& { return c.aug.sar_channels; });

  I("train.epochs", [](RunConfig& c) -> Index& { return c.train.epochs; });
  I("train.batch_size", [](RunConfig& c) -> Index& { return c.train.batch_size; });
  D("train.base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; });
  D("train.final_lr", [](RunConfig& c) -> double& { return c.train.final_lr; });
  I("train.warmup_epochs", [](RunConfig& c) -> Index& { return c.train.warmup_epochs; });
  D("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
  D("train.tau_student", [](RunConfig& c) -> double& { return c.train.tau_student; });
  D("train.tau_teacher_start", [](RunConfig& c) -> double& { return c.train.tau_teacher_start; });
  D("train.tau_teacher_end", [](RunConfig& c) -> double& { return c.train.tau_teacher_end; });
  I("train.tau_teacher_warmup_epochs", [](RunConfig& c) -> Index& { return c.train.tau_teacher_warmup_epochs; });
  D("train.center_momentum", [](RunConfig& c) -> double& { return c.train.center_momentum; });
  D("train.center_init_first", [](RunConfig& c) -> double& { return c.train.center_init_first; });
  D("train.teacher_momentum_start", [](RunConfig& c) -> double& { return c.train.teacher_momentum_start; });
  D("train.teacher_momentum_end", [](RunConfig& c) -> double& { return c.train.teacher_momentum_end; });
  U("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
  I("train.checkpoint_every", [](RunConfig& c) -> Index& { return c.train.checkpoint_every; });

  I("probe.epochs", [](RunConfig& c) -> Index& { return c.probe.epochs; });
  I("probe.batch_size", [](RunConfig& c) -> Index& { return c.probe.batch_size; });
  D("probe.lr", [](RunConfig& c) -> double& { return c.probe.lr; });
  D("probe.momentum", [](RunConfig& c) -> double& { return c.probe.momentum; });
  D("probe.label_fraction", [](RunConfig& c) -> double& { return c.probe.label_fraction; });
  f.push_back(string_field("probe.modality", [](RunConfig& c) -> std::string& { return c.probe.modality; }));
  U("probe.seed", [](RunConfig& c) -> std::uint64_t& { return c.probe.seed; });
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty() || value.empty()) {
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  }
  apply_key_value(cfg, key, value);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_file_text(path)); }

std::string canonical_config_text(const RunConfig& cfg) {
  std::map<std::string, std::string> sorted;
  for (const Field& f : fields()) sorted[f.key] = f.get(cfg);
  std::string out;
  for (const auto& [k, v] : sorted) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(canonical_config_text(cfg)); }

std::string config_diff(const std::string& text_a, const std::string& text_b) {
  auto parse_lines = [](const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
  };
  const auto a = parse_lines(text_a);
  const auto b = parse_lines(text_b);
  std::string out;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end()) {
      out += "  " + k + ": " + v + " -> (missing)\n";
    } else if (it->second != v) {
      out += "  " + k + ": " + v + " -> " + it->second + "\n";
    }
  }
  for (const auto& [k, v] : b) {
    if (a.find(k) == a.end()) out += "  " + k + ": (missing) -> " + v + "\n";
  }
  return out;
}

}  // namespace dinomm
