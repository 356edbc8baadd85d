#include "dattr/manifest.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "dattr/rng.hpp"

namespace dattr::harness {

namespace {

using nlohmann::json;

[[noreturn]] void unknown_field(const std::string& scope, const std::string& key) {
  throw ContractError("manifest: unknown field \"" + (scope.empty() ? key : scope + "." + key) +
                      "\"");
}

void check_fields(const json& obj, const std::string& scope,
                  const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) unknown_field(scope, key);
  }
}

struct SettingDefaults {
  std::vector<int> hidden_dims;
  modelzoo::LossKind loss_kind;
  trainer::TrainConfig train;
  std::string dataset;  // concrete | mnist | quadratic | glm
  bool standardize;
};

SettingDefaults setting_defaults(const std::string& setting) {
  trainer::TrainConfig paper;  // the Concrete training configuration
  paper.base_lr = 0.03;
  paper.momentum = 0.9;
  paper.weight_decay = 1e-5;
  paper.clip_norm = 1.0;
  paper.iters = 580;
  paper.batch_size = 32;
  paper.warmup_frac = 0.1;
  paper.batch_mode = dataio::BatchMode::epoch_shuffle;

  if (setting == "concrete-mlp") {
    return {{128, 128, 128}, modelzoo::LossKind::half_mse, paper, "concrete", true};
  }
  if (setting == "concrete-tiny-mlp") {
    return {{64, 64}, modelzoo::LossKind::half_mse, paper, "concrete", true};
  }
  if (setting == "mnist-mlp") {
    trainer::TrainConfig config = paper;
    config.weight_decay = 1e-3;
    config.iters = 1560;
    config.batch_size = 64;
    config.warmup_frac = 0.05;
    return {{512, 256, 128}, modelzoo::LossKind::cross_entropy, config, "mnist", false};
  }
  if (setting == "quadratic-fixture") {
    trainer::TrainConfig config;
    config.base_lr = 0.5;
    config.momentum = 0.0;
    config.weight_decay = 0.0;
    config.clip_norm.reset();
    config.iters = 300;
    config.batch_size = 8;
    config.warmup_frac = 0.0;
    config.batch_mode = dataio::BatchMode::iid;
    return {{}, modelzoo::LossKind::half_mse, config, "quadratic", false};
  }
  if (setting == "glm-fixture") {
    trainer::TrainConfig config;
    config.base_lr = 0.1;
    config.momentum = 0.0;
    config.weight_decay = 0.0;
    config.clip_norm.reset();
    config.iters = 400;
    config.batch_size = 40;
    config.warmup_frac = 0.0;
    config.batch_mode = dataio::BatchMode::iid;
    return {{}, modelzoo::LossKind::half_mse, config, "glm", false};
  }
  throw ContractError("manifest: unknown setting \"" + setting + "\"; known settings: "
                      "concrete-mlp, concrete-tiny-mlp, mnist-mlp, quadratic-fixture, "
                      "glm-fixture");
}

void parse_train(const json& obj, trainer::TrainConfig& config) {
  check_fields(obj, "train",
               {"base_lr", "momentum", "weight_decay", "clip_norm", "iters", "batch_size",
                "warmup_frac", "batch_mode"});
  if (obj.contains("base_lr")) config.base_lr = obj.at("base_lr").get<double>();
  if (obj.contains("momentum")) config.momentum = obj.at("momentum").get<double>();
  if (obj.contains("weight_decay")) config.weight_decay = obj.at("weight_decay").get<double>();
  if (obj.contains("clip_norm")) {
    if (obj.at("clip_norm").is_null()) {
      config.clip_norm.reset();
    } else {
      config.clip_norm = obj.at("clip_norm").get<double>();
    }
  }
  if (obj.contains("iters")) config.iters = obj.at("iters").get<int>();
  if (obj.contains("batch_size")) config.batch_size = obj.at("batch_size").get<int>();
  if (obj.contains("warmup_frac")) config.warmup_frac = obj.at("warmup_frac").get<double>();
  if (obj.contains("batch_mode")) {
    config.batch_mode = dataio::batch_mode_from_string(obj.at("batch_mode").get<std::string>());
  }
}

QuerySpec parse_query(const json& obj, const std::string& scope) {
  check_fields(obj, scope, {"kind", "row", "features", "target", "label", "output_index"});
  QuerySpec q;
  const std::string kind = obj.value("kind", std::string("model-output"));
  if (kind == "model-output") {
    q.kind = modelzoo::MeasurementSpec::Kind::model_output;
  } else if (kind == "loss") {
    q.kind = modelzoo::MeasurementSpec::Kind::loss_at_query;
  } else {
    throw ContractError("manifest: unknown query kind \"" + kind + "\"");
  }
  if (obj.contains("row")) q.row = obj.at("row").get<int>();
  if (obj.contains("features")) {
    const auto vals = obj.at("features").get<std::vector<double>>();
    q.features = Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                                   static_cast<Eigen::Index>(vals.size()));
  }
  if (obj.contains("target")) q.target = obj.at("target").get<double>();
  if (obj.contains("label")) q.label = obj.at("label").get<int>();
  if (obj.contains("output_index")) q.output_index = obj.at("output_index").get<int>();
  require(q.row.has_value() != q.features.has_value(),
          "manifest: query needs exactly one of \"row\" or \"features\"");
  return q;
}

json json_from_override_value(const std::string& value) {
  // Overrides arrive as strings; interpret JSON literals where possible.
  const auto parsed = json::parse(value, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  return json(value);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0,
          "override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    require(!key.empty(), "override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = json_from_override_value(value);
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

ExperimentManifest parse_manifest(const json& raw_doc, const std::vector<std::string>& overrides) {
  json doc = raw_doc;
  for (const auto& o : overrides) apply_override(doc, o);

  check_fields(doc, "",
               {"setting", "base_seed", "out_dir", "data_dir", "model", "train", "n_base_seeds",
                "n_retrain_seeds", "subsets", "methods", "deltas", "queries", "hessian",
                "calibrate", "theory2", "loo", "boltzmann", "shuffle_trials", "shuffle_seed"});

  ExperimentManifest m;
  m.setting = doc.value("setting", m.setting);
  const auto defaults = setting_defaults(m.setting);
  m.train = defaults.train;

  m.base_seed = doc.value("base_seed", m.base_seed);
  m.out_dir = doc.value("out_dir", m.out_dir);
  if (doc.contains("data_dir") && !doc.at("data_dir").is_null()) {
    m.data_dir = doc.at("data_dir").get<std::string>();
  }
  if (doc.contains("model")) {
    check_fields(doc.at("model"), "model", {"hidden_dims"});
    if (doc.at("model").contains("hidden_dims")) {
      m.hidden_dims = doc.at("model").at("hidden_dims").get<std::vector<int>>();
    }
  }
  if (doc.contains("train")) parse_train(doc.at("train"), m.train);
  m.train.validate();

  m.n_base_seeds = doc.value("n_base_seeds", m.n_base_seeds);
  m.n_retrain_seeds = doc.value("n_retrain_seeds", m.n_retrain_seeds);
  require(m.n_base_seeds >= 1 && m.n_retrain_seeds >= 1, "manifest: seed counts must be >= 1");

  if (doc.contains("subsets")) {
    check_fields(doc.at("subsets"), "subsets", {"n", "fraction", "seed"});
    m.subsets.n = doc.at("subsets").value("n", m.subsets.n);
    m.subsets.fraction = doc.at("subsets").value("fraction", m.subsets.fraction);
    m.subsets.seed = doc.at("subsets").value("seed", m.subsets.seed);
  }
  if (doc.contains("methods")) {
    m.methods = doc.at("methods").get<std::vector<std::string>>();
    for (const auto& method : m.methods) {
      require(method == "unrolled" || method == "if-exact" || method == "if-blockdiag",
              "manifest: unknown method \"" + method + "\"");
    }
    require(!m.methods.empty(), "manifest: methods must be nonempty");
  }
  if (doc.contains("deltas")) {
    m.deltas.clear();
    for (const auto& name : doc.at("deltas").get<std::vector<std::string>>()) {
      m.deltas.push_back(distmetrics::delta_kind_from_string(name));
    }
    require(!m.deltas.empty(), "manifest: deltas must be nonempty");
  }
  if (doc.contains("queries")) {
    int idx = 0;
    for (const auto& q : doc.at("queries")) {
      m.queries.push_back(parse_query(q, "queries[" + std::to_string(idx++) + "]"));
    }
  }
  if (doc.contains("hessian")) {
    check_fields(doc.at("hessian"), "hessian", {"rel_tol", "damping"});
    m.hessian_rel_tol = doc.at("hessian").value("rel_tol", m.hessian_rel_tol);
    if (doc.at("hessian").contains("damping") && !doc.at("hessian").at("damping").is_null()) {
      m.hessian_damping = doc.at("hessian").at("damping").get<double>();
    }
  }
  require(m.hessian_rel_tol > 0.0 && m.hessian_rel_tol < 1.0,
          "manifest: hessian.rel_tol must be in (0, 1)");
  m.calibrate = doc.value("calibrate", m.calibrate);

  if (doc.contains("theory2")) {
    check_fields(doc.at("theory2"), "theory2", {"checkpoints", "groups"});
    if (doc.at("theory2").contains("checkpoints")) {
      m.theory2.checkpoints = doc.at("theory2").at("checkpoints").get<std::vector<int>>();
    }
    m.theory2.n_groups = doc.at("theory2").value("groups", m.theory2.n_groups);
  }
  if (doc.contains("loo")) {
    check_fields(doc.at("loo"), "loo", {"n_examples", "seed_grid"});
    m.loo.n_examples = doc.at("loo").value("n_examples", m.loo.n_examples);
    if (doc.at("loo").contains("seed_grid")) {
      m.loo.seed_grid = doc.at("loo").at("seed_grid").get<std::vector<int>>();
    }
    require(!m.loo.seed_grid.empty(), "manifest: loo.seed_grid must be nonempty");
    require(std::is_sorted(m.loo.seed_grid.begin(), m.loo.seed_grid.end()),
            "manifest: loo.seed_grid must be ascending");
  }
  if (doc.contains("boltzmann")) {
    const auto& b = doc.at("boltzmann");
    check_fields(b, "boltzmann",
                 {"scenario", "beta", "epsilon", "step_size", "n_samples", "n_chains", "burn_in",
                  "seed", "misscale"});
    m.boltzmann.scenario = b.value("scenario", m.boltzmann.scenario);
    require(m.boltzmann.scenario == "gaussian" || m.boltzmann.scenario == "circle",
            "manifest: boltzmann.scenario must be gaussian or circle");
    m.boltzmann.beta = b.value("beta", m.boltzmann.beta);
    m.boltzmann.epsilon = b.value("epsilon", m.boltzmann.epsilon);
    m.boltzmann.step_size = b.value("step_size", m.boltzmann.step_size);
    m.boltzmann.n_samples = b.value("n_samples", m.boltzmann.n_samples);
    m.boltzmann.n_chains = b.value("n_chains", m.boltzmann.n_chains);
    m.boltzmann.burn_in = b.value("burn_in", m.boltzmann.burn_in);
    m.boltzmann.seed = b.value("seed", m.boltzmann.seed);
    m.boltzmann.misscale = b.value("misscale", m.boltzmann.misscale);
  }
  m.shuffle_trials = doc.value("shuffle_trials", m.shuffle_trials);
  m.shuffle_seed = doc.value("shuffle_seed", m.shuffle_seed);
  return m;
}

ExperimentManifest load_manifest(const std::string& path,
                                 const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IngestError("manifest: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IngestError("manifest: " + path + " is not valid JSON: " + std::string(e.what()));
  }
  return parse_manifest(doc, overrides);
}

std::uint64_t run_seed(std::uint64_t base_seed, std::string_view role, std::uint64_t subset_id,
                       std::uint64_t replicate) {
  return derive_seed(base_seed, role, subset_id, replicate);
}

dataio::DatasetTable synthetic_concrete(int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic-concrete"));
  dataio::DatasetTable table;
  constexpr int d = 8;
  table.features.resize(n, d);
  table.targets.resize(n);
  // Rough magnitudes of the real columns keep loader and standardization
  // behavior representative.
  const double scale[d] = {100.0, 80.0, 50.0, 20.0, 5.0, 100.0, 80.0, 60.0};
  const double offset[d] = {280.0, 70.0, 55.0, 180.0, 6.0, 970.0, 770.0, 45.0};
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) {
      table.features(i, c) = offset[c] + scale[c] * rng.normal();
    }
    const auto x = [&](int c) { return (table.features(i, c) - offset[c]) / scale[c]; };
    table.targets[i] = 35.0 + 12.0 * x(0) - 6.0 * x(3) + 4.0 * std::sin(x(7)) +
                       3.0 * x(1) * x(4) + 2.0 * x(2) * x(2) + 2.0 * rng.normal();
  }
  return table;
}

namespace {

dataio::DatasetTable quadratic_fixture_table() {
  // Bias-only quadratic: x = 0 rows make each loss (b - y_i)^2 / 2.
  dataio::DatasetTable table;
  table.features.resize(8, 1);
  table.features.setZero();
  table.targets.resize(8);
  table.targets << -1.0, 0.5, 2.0, 3.0, -2.5, 1.5, -0.75, 0.25;
  return table;
}

dataio::DatasetTable glm_fixture_table() {
  // Rank-deficient design: the last two columns are linear combinations of
  // the first four, so the Gram Hessian has a genuine nullspace. Columns are
  // centered so weight/bias cross-terms vanish.
  Rng rng(derive_seed(0x61B, "glm-fixture"));
  dataio::DatasetTable table;
  const int n = 40;
  table.features.resize(n, 6);
  table.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 4; ++c) table.features(i, c) = rng.normal();
    table.features(i, 4) = 0.5 * table.features(i, 0) - table.features(i, 1);
    table.features(i, 5) = table.features(i, 2) + 0.25 * table.features(i, 3);
  }
  for (int c = 0; c < 6; ++c) table.features.col(c).array() -= table.features.col(c).mean();
  for (int i = 0; i < n; ++i) {
    table.targets[i] = table.features(i, 0) - 2.0 * table.features(i, 2) + 0.1 * rng.normal();
  }
  return table;
}

std::optional<std::string> find_dataset_file(const ExperimentManifest& manifest,
                                             const std::vector<std::string>& names) {
  std::vector<std::string> dirs;
  if (manifest.data_dir) dirs.push_back(*manifest.data_dir);
  if (const char* env = std::getenv("DATTR_DATA_DIR")) dirs.push_back(env);
  for (const auto& dir : dirs) {
    for (const auto& name : names) {
      const auto path = std::filesystem::path(dir) / name;
      if (std::filesystem::exists(path)) return path.string();
    }
  }
  return std::nullopt;
}

}  // namespace

ResolvedExperiment resolve_experiment(const ExperimentManifest& manifest) {
  const auto defaults = setting_defaults(manifest.setting);
  ResolvedExperiment exp;
  exp.manifest = manifest;

  if (defaults.dataset == "concrete") {
    const auto path = find_dataset_file(manifest, {"concrete.csv", "Concrete_Data.csv"});
    if (path) {
      exp.table = dataio::load_concrete(*path);
      exp.dataset_provenance = *path;
    } else {
      exp.table = synthetic_concrete();
      exp.dataset_provenance = "synthetic";
      exp.warnings.push_back(
          "concrete.csv not found under data_dir/DATTR_DATA_DIR; using the synthetic stand-in");
    }
  } else if (defaults.dataset == "mnist") {
    const auto images =
        find_dataset_file(manifest, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"});
    const auto labels =
        find_dataset_file(manifest, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"});
    if (!images || !labels) {
      throw IngestError(
          "mnist idx files not found; place train-images-idx3-ubyte and "
          "train-labels-idx1-ubyte under data_dir or DATTR_DATA_DIR");
    }
    exp.table = dataio::load_mnist(*images, *labels);
    exp.dataset_provenance = *images;
  } else if (defaults.dataset == "quadratic") {
    exp.table = quadratic_fixture_table();
    exp.dataset_provenance = "synthetic";
  } else {
    exp.table = glm_fixture_table();
    exp.dataset_provenance = "synthetic";
  }

  dataio::StandardizeStats stats;
  if (defaults.standardize) {
    auto [std_table, st] = dataio::standardize(exp.table);
    exp.table = std::move(std_table);
    stats = std::move(st);
    exp.standardized = true;
    for (const auto& w : stats.warnings) exp.warnings.push_back(w);
  }

  const int input_dim = static_cast<int>(exp.table.input_dim());
  const int n_classes =
      exp.table.is_classification()
          ? 1 + *std::max_element(exp.table.labels.begin(), exp.table.labels.end())
          : 1;
  const std::vector<int> hidden = manifest.hidden_dims.value_or(defaults.hidden_dims);
  if (hidden.empty()) {
    exp.spec = modelzoo::glm_spec(input_dim, defaults.loss_kind);
  } else {
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(exp.table.is_classification() ? std::max(n_classes, 10) : 1);
    exp.spec = modelzoo::mlp_spec(dims, defaults.loss_kind);
  }
  require(manifest.train.batch_size <= exp.table.n(),
          "manifest: batch_size exceeds dataset size");

  // Resolve queries; default to three dataset rows spread over the table.
  std::vector<QuerySpec> qspecs = manifest.queries;
  if (qspecs.empty()) {
    const Eigen::Index n = exp.table.n();
    for (Eigen::Index frac : {1, 2, 3}) {
      QuerySpec q;
      q.row = static_cast<int>((frac * n) / 4);
      qspecs.push_back(q);
    }
  }
  for (const auto& q : qspecs) {
    modelzoo::MeasurementSpec mspec;
    mspec.kind = q.kind;
    mspec.output_index = q.output_index;
    if (q.row) {
      require(*q.row >= 0 && *q.row < exp.table.n(), "manifest: query row out of range");
      mspec.query = exp.table.row(*q.row);
      if (exp.table.is_classification()) {
        mspec.label = exp.table.labels[static_cast<std::size_t>(*q.row)];
        if (mspec.kind == modelzoo::MeasurementSpec::Kind::model_output &&
            manifest.queries.empty()) {
          mspec.output_index = mspec.label;  // default probe: the true-class logit
        }
      } else {
        mspec.target = exp.table.targets[*q.row];
      }
    } else {
      mspec.query = exp.standardized ? stats.transform_query(*q.features) : *q.features;
      if (q.target) {
        mspec.target = exp.standardized && stats.has_target
                           ? (*q.target - stats.target_mean) / stats.target_scale
                           : *q.target;
      }
      if (q.label) mspec.label = *q.label;
    }
    require(mspec.query.size() == exp.spec.input_dim(), "manifest: query dimension mismatch");
    exp.queries.push_back(std::move(mspec));
  }
  return exp;
}

nlohmann::ordered_json manifest_echo(const ExperimentManifest& m) {
  nlohmann::ordered_json doc;
  doc["setting"] = m.setting;
  doc["base_seed"] = m.base_seed;
  doc["out_dir"] = m.out_dir;
  doc["data_dir"] = m.data_dir ? nlohmann::ordered_json(*m.data_dir)
                              : nlohmann::ordered_json(nullptr);
  if (m.hidden_dims) doc["model"]["hidden_dims"] = *m.hidden_dims;
  doc["train"]["base_lr"] = m.train.base_lr;
  doc["train"]["momentum"] = m.train.momentum;
  doc["train"]["weight_decay"] = m.train.weight_decay;
  doc["train"]["clip_norm"] =
      m.train.clip_norm ? nlohmann::ordered_json(*m.train.clip_norm)
                        : nlohmann::ordered_json(nullptr);
  doc["train"]["iters"] = m.train.iters;
  doc["train"]["batch_size"] = m.train.batch_size;
  doc["train"]["warmup_frac"] = m.train.warmup_frac;
  doc["train"]["batch_mode"] = dataio::to_string(m.train.batch_mode);
  doc["n_base_seeds"] = m.n_base_seeds;
  doc["n_retrain_seeds"] = m.n_retrain_seeds;
  doc["subsets"] = {{"n", m.subsets.n}, {"fraction", m.subsets.fraction}, {"seed", m.subsets.seed}};
  doc["methods"] = m.methods;
  doc["deltas"] = nlohmann::ordered_json::array();
  for (const auto delta : m.deltas) doc["deltas"].push_back(distmetrics::to_string(delta));
  doc["hessian"] = {{"rel_tol", m.hessian_rel_tol},
                    {"damping", m.hessian_damping
                                    ? nlohmann::ordered_json(*m.hessian_damping)
                                    : nlohmann::ordered_json(nullptr)}};
  doc["calibrate"] = m.calibrate;
  doc["seed_scheme"] = "splitmix64(fnv1a(role, base_seed, subset_id, replicate))";
  return doc;
}

std::vector<std::string> known_settings() {
  return {"concrete-mlp", "concrete-tiny-mlp", "mnist-mlp", "quadratic-fixture", "glm-fixture"};
}

}  // namespace dattr::harness
