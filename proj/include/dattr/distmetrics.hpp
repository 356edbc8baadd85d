#pragma once

#include <span>
#include <string>
#include <vector>

#include "dattr/common.hpp"

namespace dattr::distmetrics {

enum class Provenance { retrained, predicted };

// Sorted scalar measurement samples over seeds.
struct EmpiricalDistribution {
  std::vector<double> samples;  // ascending
  Provenance provenance = Provenance::retrained;
  int query_id = 0;
  int subset_id = 0;

  EmpiricalDistribution() = default;
  EmpiricalDistribution(std::vector<double> values, Provenance prov, int query, int subset);
};

// Difference functions between measurement distributions. P is the original
// (full-data) distribution, Q the removed-data one.
double mean_shift(const EmpiricalDistribution& p, const EmpiricalDistribution& q);
double variance_increase(const EmpiricalDistribution& p, const EmpiricalDistribution& q);
double wasserstein2(const EmpiricalDistribution& p, const EmpiricalDistribution& q);

double mean_of(std::span<const double> xs);
double unbiased_variance(std::span<const double> xs);

// 1-D 2-Wasserstein distance between empirical measures on sorted samples;
// unequal sizes integrate squared quantile differences over the common
// refinement of jump points.
double wasserstein2_sorted(std::span<const double> p_sorted, std::span<const double> q_sorted);

// Pearson correlation; constant input on either side is an error.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);

// Linear datamodeling score: spearman between true and predicted per-subset
// scores. The multi-query variant averages per-query scores uniformly.
double lds(std::span<const double> true_scores, std::span<const double> pred_scores);
double lds_multi(const std::vector<std::vector<double>>& true_per_query,
                 const std::vector<std::vector<double>>& pred_per_query);

// Orders ids by |value| descending ("most influential first"), ties broken
// by id ascending.
std::vector<int> rank_by_magnitude(std::span<const int> ids, std::span<const double> values);

// Total rank displacement between two orderings of the same id set.
long long footrule(std::span<const int> rank_a, std::span<const int> rank_b);

// Shared fraction of the top ceil(k_frac * n) entries.
double top_k_overlap(std::span<const int> rank_a, std::span<const int> rank_b, double k_frac);

enum class DeltaKind { mean, variance, wasserstein };

std::string to_string(DeltaKind kind);
DeltaKind delta_kind_from_string(const std::string& s);

double apply_delta(DeltaKind kind, const EmpiricalDistribution& p,
                   const EmpiricalDistribution& q);

// One row per (subset, query, method, delta) tuple.
struct ScoreRow {
  int subset_id = 0;
  int query_id = 0;
  std::string method;
  std::string delta;
  double value = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  // Deterministic row order (subset, query, method, delta).
  void sort();
  std::string to_csv() const;
  static ScoreTable from_csv(const std::string& text);

  std::vector<double> values(const std::string& method, const std::string& delta,
                             int query_id) const;
  std::vector<int> subset_ids(const std::string& method, const std::string& delta,
                              int query_id) const;
};

// Fixed-width decimal formatting used for all emitted CSV/JSON numbers.
std::string format_double(double x);

}  // namespace dattr::distmetrics
