#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dattr/distmetrics.hpp"
#include "dattr/manifest.hpp"
#include "dattr/unrolled.hpp"

namespace dattr::harness {

// ---------------------------------------------------------------------------
// Seeded ensembles.
// ---------------------------------------------------------------------------

struct BaseModel {
  int replicate = 0;
  std::uint64_t seed = 0;
  ParamVec theta;
  std::vector<double> measurements;  // per query
};

struct EnsembleResult {
  std::vector<BaseModel> models;  // divergent replicates excluded
  int divergent = 0;
  int total = 0;
};

// Independent fully-trained models; more than 10% divergence is an error.
EnsembleResult train_base_models(const ResolvedExperiment& exp);

// Ground-truth measurement distributions per (subset, query), obtained by
// retraining with the subset's weights zeroed. Retrain seeds are independent
// of the base-model seeds.
struct RetrainResult {
  std::vector<std::vector<distmetrics::EmpiricalDistribution>> dists;  // [subset][query]
  int divergent = 0;
  int total = 0;
};

RetrainResult retrain_distribution(const ResolvedExperiment& exp,
                                   const std::vector<dataio::RemovalGroup>& subsets);

// Predicted measurement distributions per (subset, query): each base model
// contributes one sample m(theta_s) + grad m(theta_s)^T r(subset).
struct PredictResult {
  std::vector<std::vector<distmetrics::EmpiricalDistribution>> dists;  // [subset][query]
  std::optional<double> mean_alpha;  // calibration factor averaged over base models
};

PredictResult predict_distribution(const ResolvedExperiment& exp,
                                   const std::vector<BaseModel>& base_models,
                                   const std::string& method,
                                   const std::vector<dataio::RemovalGroup>& subsets);

// ---------------------------------------------------------------------------
// Experiment protocols.
// ---------------------------------------------------------------------------

struct LdsEntry {
  std::string method;
  std::string delta;
  double lds = 0.0;
  double null95 = 0.0;  // 95th percentile of the subset-shuffled null
};

struct LdsResult {
  distmetrics::ScoreTable scores;  // truth rows under method "retrain"
  std::vector<LdsEntry> summary;
  std::map<std::string, double> alpha_by_method;
  int divergent_retrains = 0;
  int total_retrains = 0;
  int divergent_base = 0;
  nlohmann::ordered_json to_json(const ResolvedExperiment& exp) const;
};

LdsResult run_lds_experiment(const ResolvedExperiment& exp);

struct Theorem2Result {
  std::vector<int> checkpoints;
  std::vector<std::optional<double>> correlation;  // absent while responses are zero
  std::vector<double> nullspace_fraction;          // of the measurement gradient
  nlohmann::ordered_json to_json(const ResolvedExperiment& exp) const;
};

// Correlation between unrolled and influence-function predicted measurement
// shifts across singleton groups, evaluated at training checkpoints, plus
// the Hessian-nullspace fraction of the measurement gradient.
Theorem2Result run_theorem2_experiment(const ResolvedExperiment& exp);

struct LooResult {
  std::vector<int> example_ids;  // ids in the parent table
  std::vector<int> seed_grid;
  std::vector<double> correlation;        // per grid point, batch-averaged
  std::vector<double> true_mean_shift;    // per example, at the full seed count
  std::vector<double> pred_mean_shift;    // per example, at the full seed count
  std::vector<double> base_samples;                  // per base seed
  std::vector<std::vector<double>> retrain_samples;  // [example][seed]
  std::vector<std::vector<double>> predicted_samples;  // [example][seed]
  nlohmann::ordered_json to_json(const ResolvedExperiment& exp) const;
};

// Leave-one-out signal versus ensemble size on a subsampled dataset.
LooResult run_loo_experiment(const ResolvedExperiment& exp);

struct RankPair {
  std::string delta_a;
  std::string delta_b;
  double footrule = 0.0;      // averaged over queries
  double top_overlap = 0.0;   // top-10% overlap averaged over queries
};

struct RankComparisonResult {
  std::vector<RankPair> pairs;
  int n_subsets = 0;
  long long max_footrule = 0;
  nlohmann::ordered_json to_json() const;
};

// Pairwise ranking agreement between difference functions on ground-truth
// scores (method "retrain" rows of a score table).
RankComparisonResult run_rank_comparison(const distmetrics::ScoreTable& scores,
                                         const std::vector<distmetrics::DeltaKind>& deltas,
                                         double k_frac = 0.1);

// ---------------------------------------------------------------------------
// Boltzmann transport.
// ---------------------------------------------------------------------------

struct MalaResult {
  Eigen::MatrixXd samples;  // one row per kept sample
  double acceptance_rate = 0.0;
};

// Metropolis-adjusted Langevin targeting exp(-beta * energy). Each chain
// runs burn_in + ceil(n_samples / n_chains) steps; kept samples are truncated
// to exactly n_samples rows. Acceptance below 5% is an error.
MalaResult langevin_sample(const ScalarField& energy, double beta, double step_size,
                           int n_samples, int n_chains, int burn_in, std::uint64_t seed);

struct TransportResult {
  double w2_transported = 0.0;
  double w2_identity = 0.0;
  std::optional<double> w2_misscaled;
  double acceptance_base = 0.0;
  double acceptance_perturbed = 0.0;
  nlohmann::ordered_json to_json(const BoltzmannSpec& cfg) const;
};

// Samples the base and perturbed Boltzmann measures, applies the pointwise
// influence map T(theta) = theta + eps * pinv(hess L(theta)) grad l_k(theta)
// to the base samples, and compares Wasserstein distances (per coordinate in
// 1-D, sliced with fixed projection seeds otherwise).
TransportResult transport_check(const ScalarField& loss, const ScalarField& perturbation,
                                const BoltzmannSpec& cfg, double rel_tol = 1e-6);

// Runs the scenario named in the manifest (gaussian or circle).
TransportResult run_boltzmann_experiment(const BoltzmannSpec& cfg);

// ---------------------------------------------------------------------------
// Energy fields for the transport scenarios.
// ---------------------------------------------------------------------------

// Linear combination of scalar fields with fixed coefficients.
class LinCombField : public ScalarField {
 public:
  LinCombField(std::vector<const ScalarField*> parts, std::vector<double> coeffs);
  Eigen::Index dim() const override;
  double value(const ParamVec& theta) const override;
  void gradient(const ParamVec& theta, ParamVec& out) const override;
  void gradient_dual(const ParamVec& theta, const ParamVec& tangent, ParamVec& grad_out,
                     ParamVec& hvp_out) const override;

 private:
  std::vector<const ScalarField*> parts_;
  std::vector<double> coeffs_;
};

// L(theta) = (||theta|| - 1)^2 / 2; minimum manifold is the unit sphere.
class CircleWellField : public BackpropField<CircleWellField> {
 public:
  explicit CircleWellField(Eigen::Index dim) : dim_(dim) {}
  Eigen::Index dim() const override { return dim_; }

  template <class S>
  S eval(const S* theta) const {
    using std::sqrt;
    S sq(0.0);
    for (Eigen::Index i = 0; i < dim_; ++i) sq += theta[i] * theta[i];
    const S r = sqrt(sq);
    const S d = r - S(1.0);
    return S(0.5) * d * d;
  }

  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    using std::sqrt;
    S sq(0.0);
    for (Eigen::Index i = 0; i < dim_; ++i) sq += theta[i] * theta[i];
    const S r = sqrt(sq);
    const S scale = S(1.0) - S(1.0) / r;
    for (Eigen::Index i = 0; i < dim_; ++i) grad[i] += scale * theta[i];
    const S d = r - S(1.0);
    return S(0.5) * d * d;
  }

 private:
  Eigen::Index dim_;
};

// ||theta||^2 / 2; constant on the unit sphere.
class RadialHalfSquareField : public BackpropField<RadialHalfSquareField> {
 public:
  explicit RadialHalfSquareField(Eigen::Index dim) : dim_(dim) {}
  Eigen::Index dim() const override { return dim_; }

  template <class S>
  S eval(const S* theta) const {
    S sq(0.0);
    for (Eigen::Index i = 0; i < dim_; ++i) sq += theta[i] * theta[i];
    return S(0.5) * sq;
  }

  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    for (Eigen::Index i = 0; i < dim_; ++i) grad[i] += theta[i];
    return eval(theta);
  }

 private:
  Eigen::Index dim_;
};

}  // namespace dattr::harness
