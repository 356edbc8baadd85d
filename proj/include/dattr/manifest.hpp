#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dattr/dataio.hpp"
#include "dattr/distmetrics.hpp"
#include "dattr/influence.hpp"
#include "dattr/modelzoo.hpp"
#include "dattr/trainer.hpp"

namespace dattr::harness {

// Query description as written in manifests; resolved against the (possibly
// standardized) dataset.
struct QuerySpec {
  modelzoo::MeasurementSpec::Kind kind = modelzoo::MeasurementSpec::Kind::model_output;
  std::optional<int> row;                    // dataset row providing features (and target)
  std::optional<Eigen::VectorXd> features;   // raw feature vector, standardized on resolve
  std::optional<double> target;              // loss queries on regression models
  std::optional<int> label;                  // loss queries on classifiers
  int output_index = 0;
};

struct SubsetsSpec {
  int n = 20;
  double fraction = 0.1;
  std::uint64_t seed = 7;
};

struct Theory2Spec {
  std::vector<int> checkpoints;  // iteration indices; the final iterate is always included
  int n_groups = 50;
};

struct LooSpec {
  int n_examples = 100;
  std::vector<int> seed_grid = {5, 20, 80};
};

struct BoltzmannSpec {
  std::string scenario = "gaussian";  // gaussian | circle
  double beta = 100.0;
  double epsilon = 0.1;
  double step_size = 0.05;
  int n_samples = 10000;
  int n_chains = 8;
  int burn_in = 1000;
  std::uint64_t seed = 5;
  double misscale = 0.0;  // also evaluate a deliberately rescaled map when > 0
};

// Parsed experiment description. Settings provide defaults; every field can
// be overridden in the manifest or with --set key=value.
struct ExperimentManifest {
  std::string setting = "concrete-tiny-mlp";
  std::uint64_t base_seed = 1000;
  std::string out_dir = "out";
  std::optional<std::string> data_dir;
  std::optional<std::vector<int>> hidden_dims;
  trainer::TrainConfig train;              // after setting defaults + overrides
  int n_base_seeds = 20;
  int n_retrain_seeds = 20;
  SubsetsSpec subsets;
  std::vector<std::string> methods = {"unrolled", "if-exact", "if-blockdiag"};
  std::vector<distmetrics::DeltaKind> deltas = {distmetrics::DeltaKind::mean,
                                                distmetrics::DeltaKind::variance,
                                                distmetrics::DeltaKind::wasserstein};
  std::vector<QuerySpec> queries;
  double hessian_rel_tol = 1e-4;
  std::optional<double> hessian_damping;   // defaults to the training weight decay
  bool calibrate = false;
  Theory2Spec theory2;
  LooSpec loo;
  BoltzmannSpec boltzmann;
  int shuffle_trials = 200;
  std::uint64_t shuffle_seed = 99;

  influence::HessianMode hessian_mode(influence::HessianMode::Kind kind) const {
    influence::HessianMode mode;
    mode.kind = kind;
    mode.rel_tol = hessian_rel_tol;
    mode.damping = hessian_damping.value_or(train.weight_decay);
    return mode;
  }
};

// Parse + validate. Unknown fields anywhere are rejected by name. Overrides
// are flat dotted paths applied after the manifest parse, e.g.
// "train.base_lr=0.01".
ExperimentManifest parse_manifest(const nlohmann::json& doc,
                                  const std::vector<std::string>& overrides = {});
ExperimentManifest load_manifest(const std::string& path,
                                 const std::vector<std::string>& overrides = {});

// Canonical JSON echo of everything the experiment actually used, including
// resolved dataset provenance; written next to experiment outputs.
nlohmann::ordered_json manifest_echo(const ExperimentManifest& m);

// A manifest resolved against its dataset and setting.
struct ResolvedExperiment {
  ExperimentManifest manifest;
  modelzoo::ModelSpec spec;
  dataio::DatasetTable table;  // standardized where the setting calls for it
  std::vector<modelzoo::MeasurementSpec> queries;
  std::string dataset_provenance;  // file path or "synthetic"
  bool standardized = false;
  std::vector<std::string> warnings;
};

ResolvedExperiment resolve_experiment(const ExperimentManifest& manifest);

// Deterministic per-run seeds: mixed from the base seed, a role tag, the
// subset id (or ~0 for none) and the replicate index.
std::uint64_t run_seed(std::uint64_t base_seed, std::string_view role, std::uint64_t subset_id,
                       std::uint64_t replicate);

// Synthetic stand-in for the UCI Concrete table (8 features, 1030 rows, a
// smooth nonlinear target plus noise); used when no dataset file is found.
dataio::DatasetTable synthetic_concrete(int n = 1030, std::uint64_t seed = 0xC0FFEE);

std::vector<std::string> known_settings();

}  // namespace dattr::harness
