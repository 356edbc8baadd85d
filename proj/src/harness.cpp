#include "dattr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "dattr/numcore.hpp"
#include "dattr/parallel.hpp"
#include "dattr/rng.hpp"

namespace dattr::harness {

namespace {

using dataio::RemovalGroup;
using distmetrics::EmpiricalDistribution;
using distmetrics::Provenance;

std::vector<double> measure_all(const ResolvedExperiment& exp, const ParamVec& theta) {
  std::vector<double> out;
  out.reserve(exp.queries.size());
  for (const auto& q : exp.queries) {
    out.push_back(modelzoo::measurement(q, exp.spec, theta));
  }
  return out;
}

void check_divergence_budget(int divergent, int total, const std::string& what) {
  if (divergent * 10 > total) {
    throw ExperimentError(what + ": " + std::to_string(divergent) + " of " +
                          std::to_string(total) + " runs diverged (over the 10% budget)");
  }
}

std::vector<int> singleton_ids(Eigen::Index n, int count, std::uint64_t seed) {
  require(count >= 1 && count <= n, "singleton group count out of range");
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(derive_seed(seed, "singletons"));
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const auto k = j + static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(n - j)));
    std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(k)]);
    ids[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j)];
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Probe ids for alpha calibration: evenly spaced rows.
std::vector<int> probe_ids(Eigen::Index n, int count = 16) {
  std::vector<int> ids;
  const int take = std::min<int>(count, static_cast<int>(n));
  for (int i = 0; i < take; ++i) {
    ids.push_back(static_cast<int>((static_cast<Eigen::Index>(i) * n) / take));
  }
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

influence::HessianMode mode_for_method(const ResolvedExperiment& exp,
                                       const std::string& method) {
  return exp.manifest.hessian_mode(method == "if-blockdiag"
                                       ? influence::HessianMode::Kind::block_diagonal
                                       : influence::HessianMode::Kind::exact);
}

}  // namespace

EnsembleResult train_base_models(const ResolvedExperiment& exp) {
  const int count = exp.manifest.n_base_seeds;
  EnsembleResult result;
  result.total = count;
  std::vector<std::optional<BaseModel>> slots(static_cast<std::size_t>(count));
  const auto weights = trainer::WeightVector::ones(exp.table.n());
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
    const std::uint64_t seed =
        run_seed(exp.manifest.base_seed, "base", ~std::uint64_t{0}, i);
    try {
      BaseModel model;
      model.replicate = static_cast<int>(i);
      model.seed = seed;
      model.theta = trainer::train_run(exp.spec, exp.table, exp.manifest.train, weights, seed);
      model.measurements = measure_all(exp, model.theta);
      slots[i] = std::move(model);
    } catch (const DivergenceError&) {
      slots[i] = std::nullopt;
    }
  });
  for (auto& slot : slots) {
    if (slot) {
      result.models.push_back(std::move(*slot));
    } else {
      ++result.divergent;
    }
  }
  check_divergence_budget(result.divergent, result.total, "base ensemble");
  require(result.models.size() >= 2, "base ensemble: need at least two surviving models");
  return result;
}

RetrainResult retrain_distribution(const ResolvedExperiment& exp,
                                   const std::vector<RemovalGroup>& subsets) {
  const int n_seeds = exp.manifest.n_retrain_seeds;
  RetrainResult result;
  result.total = static_cast<int>(subsets.size()) * n_seeds;

  const std::size_t jobs = subsets.size() * static_cast<std::size_t>(n_seeds);
  std::vector<std::optional<std::vector<double>>> samples(jobs);
  parallel_for(jobs, [&](std::size_t job) {
    const std::size_t s = job / static_cast<std::size_t>(n_seeds);
    const std::size_t j = job % static_cast<std::size_t>(n_seeds);
    const std::uint64_t seed = run_seed(exp.manifest.base_seed, "retrain", s, j);
    const auto weights = trainer::WeightVector::removing(exp.table.n(), subsets[s]);
    try {
      const ParamVec theta =
          trainer::train_run(exp.spec, exp.table, exp.manifest.train, weights, seed);
      samples[job] = measure_all(exp, theta);
    } catch (const DivergenceError&) {
      samples[job] = std::nullopt;
    }
  });

  result.dists.resize(subsets.size());
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    std::vector<std::vector<double>> per_query(exp.queries.size());
    for (int j = 0; j < n_seeds; ++j) {
      const auto& slot = samples[s * static_cast<std::size_t>(n_seeds) +
                                 static_cast<std::size_t>(j)];
      if (!slot) {
        ++result.divergent;
        continue;
      }
      for (std::size_t q = 0; q < exp.queries.size(); ++q) per_query[q].push_back((*slot)[q]);
    }
    for (std::size_t q = 0; q < exp.queries.size(); ++q) {
      if (per_query[q].empty()) {
        throw ExperimentError("retrain distribution: every run diverged for subset " +
                              std::to_string(s));
      }
      result.dists[s].emplace_back(std::move(per_query[q]), Provenance::retrained,
                                   static_cast<int>(q), static_cast<int>(s));
    }
  }
  check_divergence_budget(result.divergent, result.total, "retrain ensemble");
  return result;
}

namespace {

// Per-subset, per-query predicted samples from one base model.
std::vector<std::vector<double>> predict_samples_for_model(
    const ResolvedExperiment& exp, const BaseModel& model, const std::string& method,
    const std::vector<RemovalGroup>& subsets, std::optional<double>* alpha_out) {
  std::vector<std::vector<double>> out(subsets.size(),
                                       std::vector<double>(exp.queries.size(), 0.0));
  std::vector<ParamVec> responses(subsets.size());

  if (method == "unrolled") {
    const auto rset =
        unrolled::unrolled_run(exp.spec, exp.table, exp.manifest.train, model.seed, subsets);
    responses = rset.responses;
  } else {
    const influence::InfluenceEngine engine(exp.spec, exp.table,
                                            trainer::WeightVector::ones(exp.table.n()),
                                            model.theta, mode_for_method(exp, method));
    double alpha = 1.0;
    if (exp.manifest.calibrate) {
      std::vector<ParamVec> probes;
      for (int id : probe_ids(exp.table.n())) probes.push_back(engine.per_example_gradient(id));
      alpha = influence::calibrate_alpha(
          [&engine](const ParamVec& v) { return engine.apply_pinv(v); },
          [&engine](const ParamVec& v) { return engine.apply_hessian(v); }, probes);
      if (alpha_out) *alpha_out = alpha;
    }
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      responses[s] = alpha * engine.response(subsets[s]).r;
    }
  }

  for (std::size_t q = 0; q < exp.queries.size(); ++q) {
    const modelzoo::MeasurementField field(exp.queries[q], exp.spec);
    ParamVec grad_m(model.theta.size());
    field.gradient(model.theta, grad_m);
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      out[s][q] = model.measurements[q] + grad_m.dot(responses[s]);
    }
  }
  return out;
}

}  // namespace

PredictResult predict_distribution(const ResolvedExperiment& exp,
                                   const std::vector<BaseModel>& base_models,
                                   const std::string& method,
                                   const std::vector<RemovalGroup>& subsets) {
  require(!base_models.empty(), "predict_distribution: no base models");
  PredictResult result;
  std::vector<std::vector<std::vector<double>>> per_model(base_models.size());
  std::vector<std::optional<double>> alphas(base_models.size());

  if (method == "unrolled") {
    // Unrolled runs are single-threaded; spread base models over workers.
    parallel_for(base_models.size(), [&](std::size_t i) {
      per_model[i] = predict_samples_for_model(exp, base_models[i], method, subsets, &alphas[i]);
    });
  } else {
    // Influence engines parallelize internally (Hessian columns, BLAS).
    for (std::size_t i = 0; i < base_models.size(); ++i) {
      per_model[i] = predict_samples_for_model(exp, base_models[i], method, subsets, &alphas[i]);
    }
  }

  result.dists.resize(subsets.size());
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    for (std::size_t q = 0; q < exp.queries.size(); ++q) {
      std::vector<double> samples;
      samples.reserve(base_models.size());
      for (std::size_t i = 0; i < base_models.size(); ++i) samples.push_back(per_model[i][s][q]);
      result.dists[s].emplace_back(std::move(samples), Provenance::predicted,
                                   static_cast<int>(q), static_cast<int>(s));
    }
  }
  double alpha_acc = 0.0;
  int alpha_count = 0;
  for (const auto& a : alphas) {
    if (a) {
      alpha_acc += *a;
      ++alpha_count;
    }
  }
  if (alpha_count > 0) result.mean_alpha = alpha_acc / alpha_count;
  return result;
}

LdsResult run_lds_experiment(const ResolvedExperiment& exp) {
  const auto& m = exp.manifest;
  const auto subsets = dataio::make_removal_subsets(static_cast<int>(exp.table.n()), m.subsets.n,
                                                    m.subsets.fraction, m.subsets.seed);
  const auto base = train_base_models(exp);
  const auto truth = retrain_distribution(exp, subsets);

  LdsResult result;
  result.divergent_retrains = truth.divergent;
  result.total_retrains = truth.total;
  result.divergent_base = base.divergent;

  // Base measurement distributions, one per query, shared by all deltas.
  std::vector<EmpiricalDistribution> base_dists;
  for (std::size_t q = 0; q < exp.queries.size(); ++q) {
    std::vector<double> samples;
    for (const auto& model : base.models) samples.push_back(model.measurements[q]);
    base_dists.emplace_back(std::move(samples), Provenance::retrained, static_cast<int>(q), -1);
  }

  // Truth scores.
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    for (std::size_t q = 0; q < exp.queries.size(); ++q) {
      for (const auto delta : m.deltas) {
        result.scores.rows.push_back({static_cast<int>(s), static_cast<int>(q), "retrain",
                                      distmetrics::to_string(delta),
                                      distmetrics::apply_delta(delta, base_dists[q],
                                                               truth.dists[s][q])});
      }
    }
  }

  // Predicted scores per method.
  std::map<std::string, std::vector<std::vector<std::vector<double>>>> pred_scores;
  for (const auto& method : m.methods) {
    const auto pred = predict_distribution(exp, base.models, method, subsets);
    if (pred.mean_alpha) result.alpha_by_method[method] = *pred.mean_alpha;
    auto& store = pred_scores[method];
    store.assign(m.deltas.size(),
                 std::vector<std::vector<double>>(exp.queries.size(),
                                                  std::vector<double>(subsets.size(), 0.0)));
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      for (std::size_t q = 0; q < exp.queries.size(); ++q) {
        for (std::size_t d = 0; d < m.deltas.size(); ++d) {
          const double value =
              distmetrics::apply_delta(m.deltas[d], base_dists[q], pred.dists[s][q]);
          store[d][q][s] = value;
          result.scores.rows.push_back({static_cast<int>(s), static_cast<int>(q), method,
                                        distmetrics::to_string(m.deltas[d]), value});
        }
      }
    }
  }
  result.scores.sort();

  // LDS summaries and subset-shuffled nulls.
  for (const auto& method : m.methods) {
    for (std::size_t d = 0; d < m.deltas.size(); ++d) {
      const std::string delta_name = distmetrics::to_string(m.deltas[d]);
      std::vector<std::vector<double>> truth_per_query(exp.queries.size());
      for (std::size_t q = 0; q < exp.queries.size(); ++q) {
        truth_per_query[q] = result.scores.values("retrain", delta_name, static_cast<int>(q));
      }
      const auto& preds = pred_scores[method][d];
      LdsEntry entry;
      entry.method = method;
      entry.delta = delta_name;
      entry.lds = distmetrics::lds_multi(truth_per_query, preds);

      std::vector<double> null_values;
      null_values.reserve(static_cast<std::size_t>(m.shuffle_trials));
      std::vector<std::size_t> perm(subsets.size());
      for (int trial = 0; trial < m.shuffle_trials; ++trial) {
        Rng rng(derive_seed(m.shuffle_seed, "shuffle", static_cast<std::uint64_t>(trial)));
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        double acc = 0.0;
        for (std::size_t q = 0; q < exp.queries.size(); ++q) {
          std::vector<double> shuffled(subsets.size());
          for (std::size_t s = 0; s < subsets.size(); ++s) shuffled[s] = preds[q][perm[s]];
          acc += distmetrics::lds(truth_per_query[q], shuffled);
        }
        null_values.push_back(acc / static_cast<double>(exp.queries.size()));
      }
      std::sort(null_values.begin(), null_values.end());
      const std::size_t idx = static_cast<std::size_t>(
          std::ceil(0.95 * static_cast<double>(null_values.size()))) - 1;
      entry.null95 = null_values[std::min(idx, null_values.size() - 1)];
      result.summary.push_back(std::move(entry));
    }
  }
  return result;
}

nlohmann::ordered_json LdsResult::to_json(const ResolvedExperiment& exp) const {
  nlohmann::ordered_json doc;
  doc["kind"] = "lds";
  doc["dataset"] = exp.dataset_provenance;
  doc["standardized"] = exp.standardized;
  doc["divergent_retrains"] = divergent_retrains;
  doc["total_retrains"] = total_retrains;
  doc["divergent_base"] = divergent_base;
  doc["entries"] = nlohmann::ordered_json::array();
  for (const auto& entry : summary) {
    doc["entries"].push_back({{"method", entry.method},
                              {"delta", entry.delta},
                              {"lds", entry.lds},
                              {"null95", entry.null95}});
  }
  if (!alpha_by_method.empty()) {
    for (const auto& [method, alpha] : alpha_by_method) doc["alpha"][method] = alpha;
  }
  return doc;
}

Theorem2Result run_theorem2_experiment(const ResolvedExperiment& exp) {
  const auto& m = exp.manifest;
  std::vector<int> checkpoints = m.theory2.checkpoints;
  if (std::find(checkpoints.begin(), checkpoints.end(), m.train.iters) == checkpoints.end()) {
    checkpoints.push_back(m.train.iters);
  }
  std::sort(checkpoints.begin(), checkpoints.end());
  for (int t : checkpoints) {
    require(t >= 0 && t <= m.train.iters, "theory2: checkpoint out of range");
  }

  const auto ids = singleton_ids(exp.table.n(), m.theory2.n_groups, m.subsets.seed);
  std::vector<RemovalGroup> groups;
  for (int id : ids) groups.push_back(RemovalGroup{{id}});

  // One unrolled run, capturing (theta_t, r_t) at the checkpoints.
  std::vector<ParamVec> thetas(checkpoints.size());
  std::vector<std::vector<ParamVec>> responses(checkpoints.size());
  unrolled::UnrolledHooks hooks;
  hooks.on_step = [&](int t, const ParamVec& theta, const unrolled::ResponseState& rstate) {
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      if (checkpoints[c] == t) {
        thetas[c] = theta;
        responses[c] = rstate.r_theta;
      }
    }
  };
  const std::uint64_t seed = run_seed(m.base_seed, "base", ~std::uint64_t{0}, 0);
  const auto rset = unrolled::unrolled_run(exp.spec, exp.table, m.train, seed, groups, hooks);
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    if (checkpoints[c] == m.train.iters) {
      thetas[c] = rset.theta_final;
      responses[c] = rset.responses;
    }
  }

  const auto mode = exp.manifest.hessian_mode(influence::HessianMode::Kind::exact);
  const trainer::TrainingLossField data_loss(exp.spec, exp.table,
                                             trainer::WeightVector::ones(exp.table.n()), 0.0);
  const double inv_n = 1.0 / static_cast<double>(exp.table.n());

  Theorem2Result result;
  result.checkpoints = checkpoints;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const auto decomp = numcore::eigendecompose(numcore::dense_hessian(data_loss, thetas[c]));

    // Per-group influence predictions share the decomposition.
    modelzoo::Scratch<double> ws;
    std::vector<ParamVec> if_responses(groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) {
      ParamVec g = ParamVec::Zero(thetas[c].size());
      modelzoo::loss_backprop(exp.spec, thetas[c].data(), exp.table.example(ids[k]), inv_n,
                              g.data(), ws);
      if_responses[k] = numcore::pinv_apply(decomp, mode.rel_tol, mode.damping, g);
    }

    double corr_acc = 0.0;
    bool corr_defined = true;
    double null_acc = 0.0;
    for (const auto& query : exp.queries) {
      const modelzoo::MeasurementField field(query, exp.spec);
      ParamVec grad_m(thetas[c].size());
      field.gradient(thetas[c], grad_m);

      const auto [g_span, g_null] = numcore::span_projection(decomp, mode.rel_tol, grad_m);
      null_acc += g_null.norm() / std::max(1e-300, grad_m.norm());

      std::vector<double> unrolled_shift(groups.size());
      std::vector<double> if_shift(groups.size());
      for (std::size_t k = 0; k < groups.size(); ++k) {
        unrolled_shift[k] = grad_m.dot(responses[c][k]);
        if_shift[k] = grad_m.dot(if_responses[k]);
      }
      try {
        corr_acc += distmetrics::pearson(unrolled_shift, if_shift);
      } catch (const NumericError&) {
        corr_defined = false;
      }
    }
    const double nq = static_cast<double>(exp.queries.size());
    result.nullspace_fraction.push_back(null_acc / nq);
    if (corr_defined) {
      result.correlation.emplace_back(corr_acc / nq);
    } else {
      result.correlation.emplace_back(std::nullopt);
    }
  }
  return result;
}

nlohmann::ordered_json Theorem2Result::to_json(const ResolvedExperiment& exp) const {
  nlohmann::ordered_json doc;
  doc["kind"] = "theory2";
  doc["dataset"] = exp.dataset_provenance;
  doc["checkpoints"] = checkpoints;
  doc["correlation"] = nlohmann::ordered_json::array();
  for (const auto& c : correlation) {
    doc["correlation"].push_back(c ? nlohmann::ordered_json(*c)
                                   : nlohmann::ordered_json(nullptr));
  }
  doc["nullspace_fraction"] = nullspace_fraction;
  return doc;
}

LooResult run_loo_experiment(const ResolvedExperiment& exp) {
  const auto& m = exp.manifest;
  require(!exp.queries.empty(), "loo: needs a query");
  const int s_max = m.loo.seed_grid.back();
  require(s_max >= 2, "loo: need at least two seeds at the top of the grid");

  // Subsample the working table.
  const auto ids = singleton_ids(exp.table.n(), m.loo.n_examples,
                                 derive_seed(m.subsets.seed, "loo-subset"));
  dataio::DatasetTable table;
  table.features.resize(m.loo.n_examples, exp.table.input_dim());
  if (exp.table.is_classification()) {
    table.labels.resize(static_cast<std::size_t>(m.loo.n_examples));
  } else {
    table.targets.resize(m.loo.n_examples);
  }
  for (int i = 0; i < m.loo.n_examples; ++i) {
    table.features.row(i) = exp.table.features.row(ids[static_cast<std::size_t>(i)]);
    if (exp.table.is_classification()) {
      table.labels[static_cast<std::size_t>(i)] =
          exp.table.labels[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])];
    } else {
      table.targets[i] = exp.table.targets[ids[static_cast<std::size_t>(i)]];
    }
  }
  require(m.train.batch_size <= table.n(), "loo: batch_size exceeds the subsampled table");

  const auto& query = exp.queries.front();
  const modelzoo::MeasurementField field(query, exp.spec);
  std::vector<RemovalGroup> groups;
  for (int k = 0; k < m.loo.n_examples; ++k) groups.push_back(RemovalGroup{{k}});

  LooResult result;
  result.example_ids = ids;
  result.seed_grid = m.loo.seed_grid;
  result.base_samples.resize(static_cast<std::size_t>(s_max));
  result.predicted_samples.assign(groups.size(),
                                  std::vector<double>(static_cast<std::size_t>(s_max), 0.0));
  result.retrain_samples.assign(groups.size(),
                                std::vector<double>(static_cast<std::size_t>(s_max), 0.0));

  // Base models + unrolled responses for every singleton group.
  std::vector<std::vector<double>> shift(static_cast<std::size_t>(s_max));  // [seed][example]
  parallel_for(static_cast<std::size_t>(s_max), [&](std::size_t i) {
    const std::uint64_t seed = run_seed(m.base_seed, "loo-base", ~std::uint64_t{0}, i);
    const auto rset = unrolled::unrolled_run(exp.spec, table, m.train, seed, groups);
    const double base_m = modelzoo::measurement(query, exp.spec, rset.theta_final);
    ParamVec grad_m(rset.theta_final.size());
    field.gradient(rset.theta_final, grad_m);
    result.base_samples[i] = base_m;
    shift[i].resize(groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) {
      shift[i][k] = grad_m.dot(rset.responses[k]);
      result.predicted_samples[k][i] = base_m + shift[i][k];
    }
  });

  // Independent retraining ensembles per example.
  const std::size_t jobs = groups.size() * static_cast<std::size_t>(s_max);
  parallel_for(jobs, [&](std::size_t job) {
    const std::size_t k = job / static_cast<std::size_t>(s_max);
    const std::size_t j = job % static_cast<std::size_t>(s_max);
    const std::uint64_t seed = run_seed(m.base_seed, "loo-retrain", k, j);
    const auto weights = trainer::WeightVector::removing(table.n(), groups[k]);
    const ParamVec theta = trainer::train_run(exp.spec, table, m.train, weights, seed);
    result.retrain_samples[k][j] = modelzoo::measurement(query, exp.spec, theta);
  });

  // Correlation curve: disjoint batches of size s, averaged.
  for (const int s : m.loo.seed_grid) {
    require(s >= 2 && s <= s_max, "loo: seed grid entry out of range");
    const int n_batches = s_max / s;
    double acc = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      std::vector<double> true_shift(groups.size());
      std::vector<double> pred_shift(groups.size());
      const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(s);
      double base_mean = 0.0;
      for (std::size_t j = lo; j < lo + static_cast<std::size_t>(s); ++j) {
        base_mean += result.base_samples[j];
      }
      base_mean /= s;
      for (std::size_t k = 0; k < groups.size(); ++k) {
        double retrain_mean = 0.0;
        double shift_mean = 0.0;
        for (std::size_t j = lo; j < lo + static_cast<std::size_t>(s); ++j) {
          retrain_mean += result.retrain_samples[k][j];
          shift_mean += shift[j][k];
        }
        true_shift[k] = base_mean - retrain_mean / s;
        pred_shift[k] = -shift_mean / s;
      }
      acc += distmetrics::pearson(true_shift, pred_shift);
    }
    result.correlation.push_back(acc / n_batches);
  }

  // Full-count shifts for the scatter panel.
  const double base_mean =
      std::accumulate(result.base_samples.begin(), result.base_samples.end(), 0.0) / s_max;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    double retrain_mean = 0.0;
    double shift_mean = 0.0;
    for (int j = 0; j < s_max; ++j) {
      retrain_mean += result.retrain_samples[k][static_cast<std::size_t>(j)];
      shift_mean += shift[static_cast<std::size_t>(j)][k];
    }
    result.true_mean_shift.push_back(base_mean - retrain_mean / s_max);
    result.pred_mean_shift.push_back(-shift_mean / s_max);
  }
  return result;
}

nlohmann::ordered_json LooResult::to_json(const ResolvedExperiment& exp) const {
  nlohmann::ordered_json doc;
  doc["kind"] = "loo";
  doc["dataset"] = exp.dataset_provenance;
  doc["n_examples"] = example_ids.size();
  doc["seed_grid"] = seed_grid;
  doc["correlation"] = correlation;
  doc["example_ids"] = example_ids;
  doc["true_mean_shift"] = true_mean_shift;
  doc["pred_mean_shift"] = pred_mean_shift;
  return doc;
}

RankComparisonResult run_rank_comparison(const distmetrics::ScoreTable& scores,
                                         const std::vector<distmetrics::DeltaKind>& deltas,
                                         double k_frac) {
  require(deltas.size() >= 2, "rank comparison: need at least two difference functions");
  std::vector<int> query_ids;
  for (const auto& row : scores.rows) {
    if (row.method == "retrain" &&
        std::find(query_ids.begin(), query_ids.end(), row.query_id) == query_ids.end()) {
      query_ids.push_back(row.query_id);
    }
  }
  require(!query_ids.empty(), "rank comparison: no retrain rows in the score table");
  std::sort(query_ids.begin(), query_ids.end());

  RankComparisonResult result;
  for (std::size_t a = 0; a < deltas.size(); ++a) {
    for (std::size_t b = a + 1; b < deltas.size(); ++b) {
      RankPair pair;
      pair.delta_a = distmetrics::to_string(deltas[a]);
      pair.delta_b = distmetrics::to_string(deltas[b]);
      double foot_acc = 0.0;
      double overlap_acc = 0.0;
      for (const int q : query_ids) {
        const auto ids_a = scores.subset_ids("retrain", pair.delta_a, q);
        const auto vals_a = scores.values("retrain", pair.delta_a, q);
        const auto ids_b = scores.subset_ids("retrain", pair.delta_b, q);
        const auto vals_b = scores.values("retrain", pair.delta_b, q);
        require(ids_a.size() == ids_b.size() && ids_a.size() >= 2,
                "rank comparison: inconsistent score table");
        result.n_subsets = static_cast<int>(ids_a.size());
        const auto rank_a = distmetrics::rank_by_magnitude(ids_a, vals_a);
        const auto rank_b = distmetrics::rank_by_magnitude(ids_b, vals_b);
        foot_acc += static_cast<double>(distmetrics::footrule(rank_a, rank_b));
        overlap_acc += distmetrics::top_k_overlap(rank_a, rank_b, k_frac);
      }
      pair.footrule = foot_acc / static_cast<double>(query_ids.size());
      pair.top_overlap = overlap_acc / static_cast<double>(query_ids.size());
      result.pairs.push_back(std::move(pair));
    }
  }
  const long long n = result.n_subsets;
  result.max_footrule = (n * n) / 2;  // reversed ranking displacement
  return result;
}

nlohmann::ordered_json RankComparisonResult::to_json() const {
  nlohmann::ordered_json doc;
  doc["kind"] = "ranks";
  doc["n_subsets"] = n_subsets;
  doc["max_footrule"] = max_footrule;
  doc["pairs"] = nlohmann::ordered_json::array();
  for (const auto& pair : pairs) {
    doc["pairs"].push_back({{"delta_a", pair.delta_a},
                            {"delta_b", pair.delta_b},
                            {"footrule", pair.footrule},
                            {"top10_overlap", pair.top_overlap}});
  }
  return doc;
}

MalaResult langevin_sample(const ScalarField& energy, double beta, double step_size,
                           int n_samples, int n_chains, int burn_in, std::uint64_t seed) {
  require(beta > 0.0 && step_size > 0.0, "langevin_sample: beta and step_size must be positive");
  require(n_samples >= 1 && n_chains >= 1 && burn_in >= 0, "langevin_sample: bad counts");
  const Eigen::Index d = energy.dim();
  const int per_chain = (n_samples + n_chains - 1) / n_chains;
  const int steps = burn_in + per_chain;
  const double h2 = step_size * step_size;

  MalaResult result;
  result.samples.resize(static_cast<Eigen::Index>(n_chains) * per_chain, d);
  long long accepted = 0;
  long long proposed = 0;

  ParamVec x(d), grad(d), mean(d), xp(d), grad_p(d), mean_p(d);
  for (int chain = 0; chain < n_chains; ++chain) {
    Rng rng(derive_seed(seed, "chain", static_cast<std::uint64_t>(chain)));
    for (Eigen::Index i = 0; i < d; ++i) x[i] = rng.normal();
    double log_pi = -beta * energy.value(x);
    energy.gradient(x, grad);
    mean = x - 0.5 * h2 * beta * grad;

    int kept = 0;
    for (int step = 0; step < steps; ++step) {
      for (Eigen::Index i = 0; i < d; ++i) xp[i] = mean[i] + step_size * rng.normal();
      const double log_pi_p = -beta * energy.value(xp);
      energy.gradient(xp, grad_p);
      mean_p = xp - 0.5 * h2 * beta * grad_p;

      const double log_q_fwd = -(xp - mean).squaredNorm() / (2.0 * h2);
      const double log_q_bwd = -(x - mean_p).squaredNorm() / (2.0 * h2);
      const double log_ratio = log_pi_p + log_q_bwd - log_pi - log_q_fwd;
      ++proposed;
      if (log_ratio > 0.0 || std::log(rng.uniform01()) < log_ratio) {
        ++accepted;
        x = xp;
        log_pi = log_pi_p;
        mean = mean_p;
      }
      if (step >= burn_in) {
        result.samples.row(static_cast<Eigen::Index>(chain) * per_chain + kept) = x.transpose();
        ++kept;
      }
    }
  }
  result.samples.conservativeResize(n_samples, d);
  result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  if (result.acceptance_rate < 0.05) {
    throw ExperimentError("langevin_sample: acceptance rate " +
                          std::to_string(result.acceptance_rate) +
                          " below 5%; reduce step_size");
  }
  return result;
}

namespace {

double cloud_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::uint64_t slice_seed) {
  const Eigen::Index d = a.cols();
  if (d == 1) {
    std::vector<double> xa(a.col(0).data(), a.col(0).data() + a.rows());
    std::vector<double> xb(b.col(0).data(), b.col(0).data() + b.rows());
    std::sort(xa.begin(), xa.end());
    std::sort(xb.begin(), xb.end());
    return distmetrics::wasserstein2_sorted(xa, xb);
  }
  // Sliced W2 with fixed random projections.
  const int n_slices = 32;
  Rng rng(derive_seed(slice_seed, "slices"));
  double acc = 0.0;
  for (int s = 0; s < n_slices; ++s) {
    ParamVec dir(d);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < d; ++i) dir[i] = rng.normal();
      norm = dir.norm();
    } while (norm == 0.0);
    dir /= norm;
    std::vector<double> xa(static_cast<std::size_t>(a.rows()));
    std::vector<double> xb(static_cast<std::size_t>(b.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) xa[static_cast<std::size_t>(i)] = a.row(i).dot(dir);
    for (Eigen::Index i = 0; i < b.rows(); ++i) xb[static_cast<std::size_t>(i)] = b.row(i).dot(dir);
    std::sort(xa.begin(), xa.end());
    std::sort(xb.begin(), xb.end());
    const double w = distmetrics::wasserstein2_sorted(xa, xb);
    acc += w * w;
  }
  return std::sqrt(acc / n_slices);
}

}  // namespace

TransportResult transport_check(const ScalarField& loss, const ScalarField& perturbation,
                                const BoltzmannSpec& cfg, double rel_tol) {
  require(loss.dim() == perturbation.dim(), "transport_check: dimension mismatch");
  const LinCombField perturbed({&loss, &perturbation}, {1.0, -cfg.epsilon});

  TransportResult result;
  const auto base = langevin_sample(loss, cfg.beta, cfg.step_size, cfg.n_samples, cfg.n_chains,
                                    cfg.burn_in, derive_seed(cfg.seed, "base"));
  const auto target = langevin_sample(perturbed, cfg.beta, cfg.step_size, cfg.n_samples,
                                      cfg.n_chains, cfg.burn_in,
                                      derive_seed(cfg.seed, "perturbed"));
  result.acceptance_base = base.acceptance_rate;
  result.acceptance_perturbed = target.acceptance_rate;

  const Eigen::Index d = loss.dim();
  Eigen::MatrixXd transported = base.samples;
  Eigen::MatrixXd misscaled;
  if (cfg.misscale > 0.0) misscaled = base.samples;
  for (Eigen::Index i = 0; i < base.samples.rows(); ++i) {
    const ParamVec theta = base.samples.row(i).transpose();
    const auto hess = numcore::dense_hessian(loss, theta);
    const auto decomp = numcore::eigendecompose(hess);
    ParamVec grad_l(d);
    perturbation.gradient(theta, grad_l);
    const ParamVec r = numcore::pinv_apply(decomp, rel_tol, 0.0, grad_l);
    transported.row(i) = (theta + cfg.epsilon * r).transpose();
    if (cfg.misscale > 0.0) {
      misscaled.row(i) = (theta + cfg.epsilon * cfg.misscale * r).transpose();
    }
  }

  result.w2_transported = cloud_w2(transported, target.samples, cfg.seed);
  result.w2_identity = cloud_w2(base.samples, target.samples, cfg.seed);
  if (cfg.misscale > 0.0) {
    result.w2_misscaled = cloud_w2(misscaled, target.samples, cfg.seed);
  }
  return result;
}

nlohmann::ordered_json TransportResult::to_json(const BoltzmannSpec& cfg) const {
  nlohmann::ordered_json doc;
  doc["kind"] = "boltzmann";
  doc["scenario"] = cfg.scenario;
  doc["beta"] = cfg.beta;
  doc["epsilon"] = cfg.epsilon;
  doc["n_samples"] = cfg.n_samples;
  doc["w2_transported"] = w2_transported;
  doc["w2_identity"] = w2_identity;
  doc["w2_misscaled"] = w2_misscaled ? nlohmann::ordered_json(*w2_misscaled)
                                     : nlohmann::ordered_json(nullptr);
  doc["acceptance_base"] = acceptance_base;
  doc["acceptance_perturbed"] = acceptance_perturbed;
  return doc;
}

TransportResult run_boltzmann_experiment(const BoltzmannSpec& cfg) {
  if (cfg.scenario == "gaussian") {
    const QuadraticField loss(Eigen::MatrixXd::Identity(1, 1));
    ParamVec g(1);
    g << 1.0;
    const QuadraticField perturbation(Eigen::MatrixXd::Zero(1, 1), g);
    return transport_check(loss, perturbation, cfg);
  }
  const CircleWellField loss(2);
  const RadialHalfSquareField perturbation(2);
  return transport_check(loss, perturbation, cfg);
}

LinCombField::LinCombField(std::vector<const ScalarField*> parts, std::vector<double> coeffs)
    : parts_(std::move(parts)), coeffs_(std::move(coeffs)) {
  require(!parts_.empty() && parts_.size() == coeffs_.size(), "LinCombField: size mismatch");
  for (const auto* part : parts_) {
    require(part->dim() == parts_.front()->dim(), "LinCombField: dimension mismatch");
  }
}

Eigen::Index LinCombField::dim() const { return parts_.front()->dim(); }

double LinCombField::value(const ParamVec& theta) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < parts_.size(); ++i) acc += coeffs_[i] * parts_[i]->value(theta);
  return acc;
}

void LinCombField::gradient(const ParamVec& theta, ParamVec& out) const {
  out.setZero(dim());
  ParamVec tmp(dim());
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    parts_[i]->gradient(theta, tmp);
    out += coeffs_[i] * tmp;
  }
}

void LinCombField::gradient_dual(const ParamVec& theta, const ParamVec& tangent,
                                 ParamVec& grad_out, ParamVec& hvp_out) const {
  grad_out.setZero(dim());
  hvp_out.setZero(dim());
  ParamVec g(dim()), hv(dim());
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    parts_[i]->gradient_dual(theta, tangent, g, hv);
    grad_out += coeffs_[i] * g;
    hvp_out += coeffs_[i] * hv;
  }
}

}  // namespace dattr::harness
