#include <doctest.h>

#include <cmath>

#include "dattr/harness.hpp"
#include "dattr/report.hpp"
#include "support/fixtures.hpp"

using namespace dattr;
using namespace dattr::harness;

namespace {

ExperimentManifest quadratic_manifest() {
  nlohmann::json doc = {
      {"setting", "quadratic-fixture"},
      {"base_seed", 77},
      {"n_base_seeds", 8},
      {"n_retrain_seeds", 8},
      {"subsets", {{"n", 6}, {"fraction", 0.25}, {"seed", 3}}},
      {"methods", {"unrolled", "if-exact"}},
      {"shuffle_trials", 50},
  };
  return parse_manifest(doc);
}

std::vector<double> base_measurements(const std::vector<BaseModel>& models, std::size_t q = 0) {
  std::vector<double> xs;
  for (const auto& model : models) xs.push_back(model.measurements[q]);
  return xs;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("run seeds separate roles, subsets and replicates") {
  const auto a = run_seed(1, "base", 0, 0);
  CHECK(a != run_seed(1, "retrain", 0, 0));
  CHECK(a != run_seed(1, "base", 1, 0));
  CHECK(a != run_seed(1, "base", 0, 1));
  CHECK(a != run_seed(2, "base", 0, 0));
  CHECK(a == run_seed(1, "base", 0, 0));
}

TEST_CASE("mala samples the gaussian stationary law") {
  const QuadraticField energy(Eigen::MatrixXd::Identity(1, 1));
  const int n = 10000;
  const auto result = langevin_sample(energy, 4.0, 0.45, n, 8, 500, 42);
  CHECK(result.samples.rows() == n);
  CHECK(result.acceptance_rate > 0.3);

  const double mean = result.samples.col(0).mean();
  const double var = (result.samples.col(0).array() - mean).square().sum() / (n - 1);
  // Target variance 1/beta = 0.25; MCMC autocorrelation inflates the error
  // of the estimate, so the bound is loose.
  CHECK(var == doctest::Approx(0.25).epsilon(0.15));

  const auto result8 = langevin_sample(energy, 8.0, 0.32, n, 8, 500, 43);
  const double mean8 = result8.samples.col(0).mean();
  const double var8 = (result8.samples.col(0).array() - mean8).square().sum() / (n - 1);
  CHECK(var8 == doctest::Approx(0.125).epsilon(0.15));

  const auto again = langevin_sample(energy, 4.0, 0.45, 100, 2, 50, 7);
  const auto again2 = langevin_sample(energy, 4.0, 0.45, 100, 2, 50, 7);
  CHECK((again.samples - again2.samples).norm() == 0.0);
}

TEST_CASE("mala rejects a hopeless step size") {
  const QuadraticField energy(Eigen::MatrixXd::Identity(1, 1));
  CHECK_THROWS_AS(langevin_sample(energy, 100.0, 50.0, 500, 2, 50, 1), ExperimentError);
}

TEST_CASE("transport check on the gaussian scenario") {
  BoltzmannSpec cfg;
  cfg.scenario = "gaussian";
  cfg.beta = 100.0;
  cfg.epsilon = 0.1;
  cfg.step_size = 0.09;
  cfg.n_samples = 4000;
  cfg.n_chains = 8;
  cfg.burn_in = 500;
  cfg.seed = 11;
  cfg.misscale = 2.0;
  const auto result = run_boltzmann_experiment(cfg);
  // The influence map translates the base cloud onto the target mean; the
  // identity map leaves the whole mean gap in place.
  CHECK(result.w2_transported < 0.1 * result.w2_identity);
  REQUIRE(result.w2_misscaled.has_value());
  CHECK(result.w2_transported < *result.w2_misscaled);
}

TEST_CASE("transport with zero perturbation is exactly neutral") {
  BoltzmannSpec cfg;
  cfg.scenario = "gaussian";
  cfg.beta = 50.0;
  cfg.epsilon = 0.0;
  cfg.step_size = 0.12;
  cfg.n_samples = 500;
  cfg.n_chains = 4;
  cfg.burn_in = 100;
  cfg.seed = 13;
  const auto result = run_boltzmann_experiment(cfg);
  CHECK(result.w2_transported == result.w2_identity);
}

TEST_CASE("transport check on the circle manifold") {
  BoltzmannSpec cfg;
  cfg.scenario = "circle";
  cfg.beta = 100.0;
  cfg.epsilon = 0.1;
  cfg.step_size = 0.07;
  cfg.n_samples = 4000;
  cfg.n_chains = 8;
  cfg.burn_in = 500;
  cfg.seed = 17;
  const auto result = run_boltzmann_experiment(cfg);
  CHECK(result.w2_transported < result.w2_identity);
}

TEST_CASE("base ensembles and empty-subset retraining agree statistically") {
  const auto manifest = quadratic_manifest();
  const auto exp = resolve_experiment(manifest);
  const auto base = train_base_models(exp);
  CHECK(base.models.size() == 8);
  CHECK(base.divergent == 0);

  const std::vector<dataio::RemovalGroup> null_subset = {dataio::RemovalGroup{}};
  const auto retrain = retrain_distribution(exp, null_subset);
  // Same generating process, independent seeds; on the quadratic fixture
  // every run converges to the same minimum so means agree tightly.
  const double base_mean = distmetrics::mean_of(base_measurements(base.models));
  const double retrain_mean = distmetrics::mean_of(retrain.dists[0][0].samples);
  CHECK(base_mean == doctest::Approx(retrain_mean).epsilon(1e-6));
}

TEST_CASE("empty subsets predict the base distribution unchanged") {
  const auto manifest = quadratic_manifest();
  const auto exp = resolve_experiment(manifest);
  const auto base = train_base_models(exp);
  const std::vector<dataio::RemovalGroup> null_subset = {dataio::RemovalGroup{}};
  for (const std::string method : {"unrolled", "if-exact"}) {
    const auto pred = predict_distribution(exp, base.models, method, null_subset);
    auto base_samples = base_measurements(base.models);
    std::sort(base_samples.begin(), base_samples.end());
    for (std::size_t i = 0; i < base_samples.size(); ++i) {
      CHECK(pred.dists[0][0].samples[i] == doctest::Approx(base_samples[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("quadratic fixture predictions match the closed form") {
  // On the bias-only quadratic the response moves each sample by exactly
  // (1/N) sum_{k in G} (b* - a_k), so the predicted mean shift is analytic.
  const auto manifest = quadratic_manifest();
  const auto exp = resolve_experiment(manifest);
  const auto base = train_base_models(exp);
  const auto subsets = dataio::make_removal_subsets(
      static_cast<int>(exp.table.n()), manifest.subsets.n, manifest.subsets.fraction,
      manifest.subsets.seed);
  const auto pred = predict_distribution(exp, base.models, "if-exact", subsets);

  const double n = static_cast<double>(exp.table.n());
  const double b_star = exp.table.targets.mean();
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    double shift = 0.0;
    for (int k : subsets[s].indices) shift += (b_star - exp.table.targets[k]) / n;
    const double expected_mean = distmetrics::mean_of(base_measurements(base.models)) + shift;
    const double got_mean = distmetrics::mean_of(pred.dists[s][0].samples);
    CHECK(got_mean == doctest::Approx(expected_mean).epsilon(1e-6));
  }
}

TEST_CASE("lds experiment on the quadratic fixture is strong and deterministic") {
  const auto manifest = quadratic_manifest();
  const auto exp = resolve_experiment(manifest);
  const auto result = run_lds_experiment(exp);
  REQUIRE(!result.summary.empty());
  for (const auto& entry : result.summary) {
    if (entry.delta == "mean") {
      CHECK(entry.lds > 0.9);  // both methods are near-exact on a quadratic
      CHECK(entry.lds > entry.null95);
    }
  }
  const auto again = run_lds_experiment(exp);
  CHECK(result.scores.to_csv() == again.scores.to_csv());
}

TEST_CASE("theorem-2 style correlation rises to one on the quadratic fixture") {
  nlohmann::json doc = {
      {"setting", "quadratic-fixture"},
      {"base_seed", 5},
      {"train", {{"iters", 120}, {"base_lr", 0.2}}},
      {"theory2", {{"checkpoints", {0, 10, 120}}, {"groups", 5}}},
  };
  const auto exp = resolve_experiment(parse_manifest(doc));
  const auto result = run_theorem2_experiment(exp);
  REQUIRE(result.checkpoints.size() == 3);
  CHECK(!result.correlation[0].has_value());  // zero responses at t = 0
  REQUIRE(result.correlation[2].has_value());
  CHECK(*result.correlation[2] == doctest::Approx(1.0).epsilon(1e-3));
  if (result.correlation[1]) CHECK(*result.correlation[1] <= *result.correlation[2] + 1e-9);
}

TEST_CASE("rank comparison recognizes monotone-equivalent rankings") {
  distmetrics::ScoreTable table;
  for (int s = 0; s < 10; ++s) {
    const double v = (s % 2 == 0 ? 1.0 : -1.0) * (s + 1);  // distinct magnitudes
    table.rows.push_back({s, 0, "retrain", "mean", v});
    table.rows.push_back({s, 0, "retrain", "variance", 3.0 * v});  // same |.| order
    table.rows.push_back({s, 0, "retrain", "wasserstein", 1.0 / (std::abs(v) + 1.0)});  // reversed
  }
  table.sort();
  const auto result = run_rank_comparison(
      table, {distmetrics::DeltaKind::mean, distmetrics::DeltaKind::variance,
              distmetrics::DeltaKind::wasserstein});
  REQUIRE(result.pairs.size() == 3);
  CHECK(result.pairs[0].footrule == doctest::Approx(0.0));
  CHECK(result.pairs[0].top_overlap == doctest::Approx(1.0));
  // mean vs wasserstein: fully reversed magnitudes displace n^2/2 places.
  CHECK(result.pairs[1].footrule == doctest::Approx(50.0));
  CHECK(result.pairs[1].top_overlap == doctest::Approx(0.0));
  CHECK(result.max_footrule == 50);
}

TEST_CASE("glm fixture: unrolled settles onto influence responses") {
  nlohmann::json doc = {
      {"setting", "glm-fixture"},
      {"base_seed", 9},
      {"train", {{"iters", 2500}, {"base_lr", 0.35}}},
      {"theory2", {{"checkpoints", nlohmann::json::array({})}, {"groups", 8}}},
  };
  const auto exp = resolve_experiment(parse_manifest(doc));
  const auto result = run_theorem2_experiment(exp);
  REQUIRE(result.correlation.back().has_value());
  CHECK(*result.correlation.back() > 0.999);
}

}  // TEST_SUITE
