#include "dinomm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <utility>

#include "dinomm/error.hpp"
#include "dinomm/rng.hpp"

namespace dinomm {

namespace {

constexpr std::uint64_t kSubsetSalt = 0x5e1ec7;

double softplus_stable(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

Tensor rows_tensor(const Matrix& m, const std::vector<Index>& rows) {
  const Index b = static_cast<Index>(rows.size());
  const Index f = m.cols();
  Array buf(b * f);
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < f; ++j) buf[i * f + j] = m(rows[static_cast<std::size_t>(i)], j);
  }
  return Tensor::from_data({b, f}, std::move(buf));
}

}  // namespace

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::sar: return "s1";
    case Modality::optical: return "s2";
    case Modality::joint: return "s1s2";
  }
  throw ContractError("modality_name: bad enum value");
}

Modality parse_modality(const std::string& name) {
  if (name == "s1") return Modality::sar;
  if (name == "s2") return Modality::optical;
  if (name == "s1s2") return Modality::joint;
  throw ConfigError("unknown modality '" + name + "', expected s1, s2 or s1s2");
}

DropMode modality_drop(Modality m) {
  switch (m) {
    case Modality::sar: return DropMode::sar_only;
    case Modality::optical: return DropMode::optical_only;
    case Modality::joint: return DropMode::both;
  }
  throw ContractError("modality_drop: bad enum value");
}

Matrix label_matrix(const Dataset& ds) {
  Matrix out(ds.size(), ds.num_classes);
  for (Index i = 0; i < ds.size(); ++i) {
    const auto& labels = ds.samples[static_cast<std::size_t>(i)].labels;
    for (Index k = 0; k < ds.num_classes; ++k) out(i, k) = labels[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
  }
  return out;
}

Matrix extract_features(const ViTConfig& cfg, const ParameterSet& params, const Dataset& ds, Modality m,
                        Index chunk) {
  if (ds.width != ds.height) {
    throw ConfigError("extract_features: needs square scenes, got " + std::to_string(ds.width) + "x" +
                      std::to_string(ds.height));
  }
  if (chunk < 1) throw ConfigError("extract_features: chunk must be >= 1");
  const ParameterSet frozen = clone_params(params, false);
  const DropMode drop = modality_drop(m);
  const Index n = ds.size();
  const Index per = ds.c_total * ds.height * ds.width;
  Matrix out(n, cfg.embed_dim);
  for (Index start = 0; start < n; start += chunk) {
    const Index b = std::min(chunk, n - start);
    Array buf(b * per);
    for (Index i = 0; i < b; ++i) {
      const Tensor masked =
          apply_sensor_drop(ds.samples[static_cast<std::size_t>(start + i)].pixels, drop, ds.c_optical);
      buf.segment(i * per, per) = masked.values();
    }
    const Tensor rep = encode(cfg, frozen, Tensor::from_data({b, ds.c_total, ds.height, ds.width}, std::move(buf)));
    const Array& vals = rep.values();
    for (Index i = 0; i < b; ++i) {
      for (Index j = 0; j < cfg.embed_dim; ++j) out(start + i, j) = vals[i * cfg.embed_dim + j];
    }
  }
  return out;
}

Matrix flatten_pixels(const Dataset& ds, Modality m) {
  const DropMode drop = modality_drop(m);
  const Index per = ds.c_total * ds.height * ds.width;
  Matrix out(ds.size(), per);
  for (Index i = 0; i < ds.size(); ++i) {
    const Tensor masked = apply_sensor_drop(ds.samples[static_cast<std::size_t>(i)].pixels, drop, ds.c_optical);
    const Array& vals = masked.values();
    for (Index j = 0; j < per; ++j) out(i, j) = vals[j];
  }
  return out;
}

std::vector<Index> stratified_subset(const Matrix& labels, double fraction, std::uint64_t seed) {
  const Index n = labels.rows();
  const Index k = labels.cols();
  if (n < 1) throw ContractError("stratified_subset: empty label table");
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("stratified_subset: fraction must be in (0, 1], got " + format_double(fraction));
  }
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  if (fraction == 1.0) return all;

  const Index target = std::max<Index>(1, static_cast<Index>(std::llround(fraction * static_cast<double>(n))));
  Rng root = Rng::from_seed(seed).split(kSubsetSalt);
  std::vector<std::vector<Index>> pools(static_cast<std::size_t>(k));
  for (Index c = 0; c < k; ++c) {
    auto& pool = pools[static_cast<std::size_t>(c)];
    for (Index i = 0; i < n; ++i) {
      if (labels(i, c) != 0.0) pool.push_back(i);
    }
    Rng stream = root.split(static_cast<std::uint64_t>(c));
    stream.shuffle(pool);
  }

  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<std::size_t> cursor(static_cast<std::size_t>(k), 0);
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(target));
  bool progress = true;
  while (static_cast<Index>(picked.size()) < target && progress) {
    progress = false;
    for (Index c = 0; c < k && static_cast<Index>(picked.size()) < target; ++c) {
      auto& pos = cursor[static_cast<std::size_t>(c)];
      const auto& pool = pools[static_cast<std::size_t>(c)];
      while (pos < pool.size() && taken[static_cast<std::size_t>(pool[pos])]) ++pos;
      if (pos == pool.size()) continue;
      taken[static_cast<std::size_t>(pool[pos])] = 1;
      picked.push_back(pool[pos]);
      ++pos;
      progress = true;
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

LinearProbe train_probe(const Matrix& features, const Matrix& labels, const ProbeConfig& cfg) {
  cfg.validate();
  const Index n = features.rows();
  const Index f = features.cols();
  const Index k = labels.cols();
  if (labels.rows() != n) throw ShapeError("train_probe: feature and label row counts differ");
  if (n < 1) throw ContractError("train_probe: no training rows");

  Tensor w = Tensor::param({f, k}, Array::Zero(f * k));
  Tensor b = Tensor::param({k}, Array::Zero(k));
  Array vel_w = Array::Zero(f * k);
  Array vel_b = Array::Zero(k);
  const Matrix inv_labels = Matrix::Ones(n, k) - labels;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    const double lr = cfg.lr * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
    for (const auto& batch : epoch_batches(n, cfg.batch_size, cfg.seed, epoch)) {
      const Tensor xb = rows_tensor(features, batch);
      const Tensor yb = rows_tensor(labels, batch);
      const Tensor nyb = rows_tensor(inv_labels, batch);
      const Tensor z = add(matmul(xb, w), b);
      const Tensor loss = mean(add(mul(yb, softplus(neg(z))), mul(nyb, softplus(z))));
      backward(loss);
      vel_w = cfg.momentum * vel_w + w.grad();
      vel_b = cfg.momentum * vel_b + b.grad();
      w.values_mut() -= lr * vel_w;
      b.values_mut() -= lr * vel_b;
      w.clear_grad();
      b.clear_grad();
    }
  }

  LinearProbe probe;
  probe.weight = Matrix(f, k);
  probe.bias = Eigen::VectorXd(k);
  for (Index i = 0; i < f; ++i) {
    for (Index j = 0; j < k; ++j) probe.weight(i, j) = w.values()[i * k + j];
  }
  for (Index j = 0; j < k; ++j) probe.bias[j] = b.values()[j];
  return probe;
}

Matrix probe_scores(const LinearProbe& probe, const Matrix& features) {
  if (features.cols() != probe.weight.rows()) {
    throw ShapeError("probe_scores: feature width " + std::to_string(features.cols()) + " does not match probe " +
                     std::to_string(probe.weight.rows()));
  }
  return (features * probe.weight).rowwise() + probe.bias.transpose();
}

double soft_margin_loss(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ShapeError("soft_margin_loss: score and label shapes differ");
  }
  double total = 0.0;
  for (Index i = 0; i < scores.rows(); ++i) {
    for (Index j = 0; j < scores.cols(); ++j) {
      const double z = scores(i, j);
      total += labels(i, j) * softplus_stable(-z) + (1.0 - labels(i, j)) * softplus_stable(z);
    }
  }
  return total / static_cast<double>(scores.rows() * scores.cols());
}

ApResult mean_average_precision(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ShapeError("mean_average_precision: score and label shapes differ");
  }
  const Index n = scores.rows();
  const Index k = scores.cols();
  if (n < 1) throw ContractError("mean_average_precision: no rows");

  ApResult result;
  result.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  Index valid = 0;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index c = 0; c < k; ++c) {
    Index positives = 0;
    for (Index i = 0; i < n; ++i) {
      if (labels(i, c) != 0.0) ++positives;
    }
    if (positives == 0) continue;
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a, c) > scores(b, c); });
    Index hits = 0;
    double ap = 0.0;
    for (Index rank = 0; rank < n; ++rank) {
      if (labels(order[static_cast<std::size_t>(rank)], c) != 0.0) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap /= static_cast<double>(positives);
    result.per_class[static_cast<std::size_t>(c)] = ap;
    sum += ap;
    ++valid;
  }
  if (valid == 0) throw ValueError("mean_average_precision: no class has a positive sample");
  result.map = sum / static_cast<double>(valid);
  return result;
}

EvalCell probe_cell(const Matrix& train_features, const Matrix& train_labels, const Matrix& test_features,
                    const Matrix& test_labels, double fraction, const ProbeConfig& cfg) {
  const std::vector<Index> rows = stratified_subset(train_labels, fraction, cfg.seed);
  const Matrix sub_features = gather_rows(train_features, rows);
  const Matrix sub_labels = gather_rows(train_labels, rows);
  const LinearProbe probe = train_probe(sub_features, sub_labels, cfg);
  const ApResult ap = mean_average_precision(probe_scores(probe, test_features), test_labels);

  EvalCell cell;
  cell.label_fraction = fraction;
  cell.n_train = static_cast<Index>(rows.size());
  cell.map = ap.map;
  cell.per_class = ap.per_class;
  return cell;
}

namespace {

std::vector<EvalCell> grid_over(const std::function<Matrix(const Dataset&, Modality)>& featurize, Dataset train,
                                Dataset test, const std::vector<Modality>& modalities,
                                const std::vector<double>& fractions, const ProbeConfig& cfg) {
  train.validate();
  test.validate();
  if (train.c_total != test.c_total || train.c_optical != test.c_optical || train.num_classes != test.num_classes) {
    throw ConfigError("probe grid: train and test layouts differ");
  }
  if (modalities.empty() || fractions.empty()) throw ConfigError("probe grid: nothing to evaluate");

  const ChannelStats stats = compute_channel_stats(train);
  normalize_in_place(train, stats);
  normalize_in_place(test, stats);
  const Matrix train_labels = label_matrix(train);
  const Matrix test_labels = label_matrix(test);

  std::vector<EvalCell> cells;
  for (Modality m : modalities) {
    const Matrix train_features = featurize(train, m);
    const Matrix test_features = featurize(test, m);
    for (double fraction : fractions) {
      EvalCell cell = probe_cell(train_features, train_labels, test_features, test_labels, fraction, cfg);
      cell.modality = modality_name(m);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace

std::vector<EvalCell> run_probe_grid(const ViTConfig& vit, const ParameterSet& params, Dataset train, Dataset test,
                                     const std::vector<Modality>& modalities, const std::vector<double>& fractions,
                                     const ProbeConfig& cfg) {
  auto featurize = [&](const Dataset& ds, Modality m) { return extract_features(vit, params, ds, m); };
  return grid_over(featurize, std::move(train), std::move(test), modalities, fractions, cfg);
}

std::vector<EvalCell> run_pixel_probe_grid(Dataset train, Dataset test, const std::vector<Modality>& modalities,
                                           const std::vector<double>& fractions, const ProbeConfig& cfg) {
  auto featurize = [](const Dataset& ds, Modality m) { return flatten_pixels(ds, m); };
  return grid_over(featurize, std::move(train), std::move(test), modalities, fractions, cfg);
}

EvalCell evaluate(const ViTConfig& vit, const ParameterSet& params, Dataset train, Dataset test,
                  const ProbeConfig& cfg) {
  cfg.validate();
  auto cells = run_probe_grid(vit, params, std::move(train), std::move(test), {parse_modality(cfg.modality)},
                              {cfg.label_fraction}, cfg);
  return cells.front();
}

}  // namespace dinomm
