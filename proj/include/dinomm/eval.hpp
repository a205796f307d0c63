#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dinomm/augment.hpp"
#include "dinomm/config.hpp"
#include "dinomm/data.hpp"
#include "dinomm/vit.hpp"

namespace dinomm {

// Which sensor block the probe input keeps; the other is zeroed the same
// way training views drop a sensor.
enum class Modality { sar, optical, joint };

std::string modality_name(Modality m);     // "s1", "s2", "s1s2"
Modality parse_modality(const std::string& name);
DropMode modality_drop(Modality m);

using Matrix = Eigen::MatrixXd;

// [n, num_classes] 0/1 label table.
Matrix label_matrix(const Dataset& ds);

// Frozen-encoder cls features [n, embed_dim] over full scenes, with the
// dropped sensor zeroed first. Expects a normalized dataset.
Matrix extract_features(const ViTConfig& cfg, const ParameterSet& params, const Dataset& ds, Modality m,
                        Index chunk = 64);

// Masked raw pixels as [n, C*H*W] features, the no-encoder baseline.
Matrix flatten_pixels(const Dataset& ds, Modality m);

// Per-class round-robin pick of roughly fraction*n samples, each class
// contributing its positives in a key-derived shuffle order. Returns sorted
// row indices; fraction 1 returns every row.
std::vector<Index> stratified_subset(const Matrix& labels, double fraction, std::uint64_t seed);

struct LinearProbe {
  Matrix weight;          // [F, K]
  Eigen::VectorXd bias;   // [K]
};

// One-vs-rest logistic probe trained with minibatch SGD (momentum, cosine
// lr decay) on the soft-margin loss. Features are used as given; the probe
// has no access to the encoder.
LinearProbe train_probe(const Matrix& features, const Matrix& labels, const ProbeConfig& cfg);

Matrix probe_scores(const LinearProbe& probe, const Matrix& features);

// Mean over samples and classes of y*softplus(-z) + (1-y)*softplus(z).
double soft_margin_loss(const Matrix& scores, const Matrix& labels);

struct ApResult {
  std::vector<double> per_class;  // NaN for classes with no positives
  double map{0};                  // mean over classes that have positives
};

// Average precision per class from ranked scores; ties break by row order.
ApResult mean_average_precision(const Matrix& scores, const Matrix& labels);

struct EvalCell {
  std::string modality;
  double label_fraction{1.0};
  Index n_train{0};
  double map{0};
  std::vector<double> per_class;
};

// Probe one (features, fraction) cell: subset, fit, score the test split.
EvalCell probe_cell(const Matrix& train_features, const Matrix& train_labels, const Matrix& test_features,
                    const Matrix& test_labels, double fraction, const ProbeConfig& cfg);

// The full grid: per modality, features are extracted once and shared
// across fractions. Datasets come in raw; train stats normalize both.
std::vector<EvalCell> run_probe_grid(const ViTConfig& vit, const ParameterSet& params, Dataset train, Dataset test,
                                     const std::vector<Modality>& modalities, const std::vector<double>& fractions,
                                     const ProbeConfig& cfg);

// Same grid over masked raw pixels instead of encoder features.
std::vector<EvalCell> run_pixel_probe_grid(Dataset train, Dataset test, const std::vector<Modality>& modalities,
                                           const std::vector<double>& fractions, const ProbeConfig& cfg);

// The single cell named by cfg.modality and cfg.label_fraction.
EvalCell evaluate(const ViTConfig& vit, const ParameterSet& params, Dataset train, Dataset test,
                  const ProbeConfig& cfg);

}  // namespace dinomm
