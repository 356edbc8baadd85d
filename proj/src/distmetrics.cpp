#include "dattr/distmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace dattr::distmetrics {

EmpiricalDistribution::EmpiricalDistribution(std::vector<double> values, Provenance prov,
                                             int query, int subset)
    : samples(std::move(values)), provenance(prov), query_id(query), subset_id(subset) {
  require(!samples.empty(), "EmpiricalDistribution: needs at least one sample");
  for (double v : samples) {
    if (!std::isfinite(v)) throw NumericError("EmpiricalDistribution: non-finite sample");
  }
  std::sort(samples.begin(), samples.end());
}

double mean_of(std::span<const double> xs) {
  require(!xs.empty(), "mean_of: empty input");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double unbiased_variance(std::span<const double> xs) {
  require(xs.size() >= 2, "unbiased_variance: needs at least two samples");
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

double mean_shift(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  return mean_of(p.samples) - mean_of(q.samples);
}

double variance_increase(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  return unbiased_variance(q.samples) - unbiased_variance(p.samples);
}

double wasserstein2_sorted(std::span<const double> p, std::span<const double> q) {
  require(!p.empty() && !q.empty(), "wasserstein2: empty distribution");
  const std::size_t m = p.size();
  const std::size_t n = q.size();
  if (m == n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
    return std::sqrt(acc / static_cast<double>(m));
  }
  // Quantile functions are step functions with jumps at i/m and j/n; walk
  // the common refinement on the denominator m*n using integer positions.
  const long long total = static_cast<long long>(m) * static_cast<long long>(n);
  long long cur = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  double acc = 0.0;
  while (cur < total) {
    const long long next_p = static_cast<long long>(i + 1) * static_cast<long long>(n);
    const long long next_q = static_cast<long long>(j + 1) * static_cast<long long>(m);
    const long long nxt = std::min(next_p, next_q);
    const double len = static_cast<double>(nxt - cur) / static_cast<double>(total);
    const double diff = p[i] - q[j];
    acc += len * diff * diff;
    cur = nxt;
    if (nxt == next_p) ++i;
    if (nxt == next_q) ++j;
  }
  return std::sqrt(acc);
}

double wasserstein2(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  return wasserstein2_sorted(p.samples, q.samples);
}

namespace {

std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), "pearson: length mismatch");
  require(xs.size() >= 2, "pearson: needs at least two pairs");
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw NumericError("pearson: correlation undefined for constant input");
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), "spearman: length mismatch");
  require(xs.size() >= 2, "spearman: needs at least two pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  try {
    return pearson(rx, ry);
  } catch (const NumericError&) {
    throw NumericError("spearman: correlation undefined for constant input");
  }
}

double lds(std::span<const double> true_scores, std::span<const double> pred_scores) {
  require(true_scores.size() >= 2, "lds: needs at least two subsets");
  return spearman(true_scores, pred_scores);
}

double lds_multi(const std::vector<std::vector<double>>& true_per_query,
                 const std::vector<std::vector<double>>& pred_per_query) {
  require(!true_per_query.empty(), "lds_multi: no queries");
  require(true_per_query.size() == pred_per_query.size(), "lds_multi: query count mismatch");
  double acc = 0.0;
  for (std::size_t qid = 0; qid < true_per_query.size(); ++qid) {
    acc += lds(true_per_query[qid], pred_per_query[qid]);
  }
  return acc / static_cast<double>(true_per_query.size());
}

std::vector<int> rank_by_magnitude(std::span<const int> ids, std::span<const double> values) {
  require(ids.size() == values.size(), "rank_by_magnitude: length mismatch");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    if (ma != mb) return ma > mb;
    return ids[a] < ids[b];
  });
  std::vector<int> ranked(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = ids[order[i]];
  return ranked;
}

namespace {

std::map<int, std::size_t> position_map(std::span<const int> ranking) {
  std::map<int, std::size_t> pos;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const bool inserted = pos.emplace(ranking[i], i + 1).second;
    require(inserted, "footrule: duplicate id in ranking");
  }
  return pos;
}

}  // namespace

long long footrule(std::span<const int> rank_a, std::span<const int> rank_b) {
  require(rank_a.size() == rank_b.size(), "footrule: rankings must have equal length");
  const auto pos_a = position_map(rank_a);
  const auto pos_b = position_map(rank_b);
  long long total = 0;
  for (const auto& [id, pa] : pos_a) {
    const auto it = pos_b.find(id);
    require(it != pos_b.end(), "footrule: rankings must permute the same id set");
    total += std::llabs(static_cast<long long>(pa) - static_cast<long long>(it->second));
  }
  return total;
}

double top_k_overlap(std::span<const int> rank_a, std::span<const int> rank_b, double k_frac) {
  require(rank_a.size() == rank_b.size(), "top_k_overlap: rankings must have equal length");
  require(k_frac > 0.0 && k_frac <= 1.0, "top_k_overlap: k_frac must be in (0, 1]");
  position_map(rank_a);
  const auto pos_b = position_map(rank_b);
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(k_frac * static_cast<double>(rank_a.size())));
  std::size_t shared = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto it = pos_b.find(rank_a[i]);
    require(it != pos_b.end(), "top_k_overlap: rankings must permute the same id set");
    if (it->second <= k) ++shared;
  }
  return static_cast<double>(shared) / static_cast<double>(k);
}

std::string to_string(DeltaKind kind) {
  switch (kind) {
    case DeltaKind::mean: return "mean";
    case DeltaKind::variance: return "variance";
    case DeltaKind::wasserstein: return "wasserstein";
  }
  return "unknown";
}

DeltaKind delta_kind_from_string(const std::string& s) {
  if (s == "mean") return DeltaKind::mean;
  if (s == "variance") return DeltaKind::variance;
  if (s == "wasserstein") return DeltaKind::wasserstein;
  throw ContractError("unknown delta kind: " + s);
}

double apply_delta(DeltaKind kind, const EmpiricalDistribution& p,
                   const EmpiricalDistribution& q) {
  switch (kind) {
    case DeltaKind::mean: return mean_shift(p, q);
    case DeltaKind::variance: return variance_increase(p, q);
    case DeltaKind::wasserstein: return wasserstein2(p, q);
  }
  throw ContractError("apply_delta: unknown delta kind");
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void ScoreTable::sort() {
  std::sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    if (a.subset_id != b.subset_id) return a.subset_id < b.subset_id;
    if (a.query_id != b.query_id) return a.query_id < b.query_id;
    if (a.method != b.method) return a.method < b.method;
    return a.delta < b.delta;
  });
}

std::string ScoreTable::to_csv() const {
  std::string out = "subset_id,query_id,method,delta,value\n";
  for (const auto& row : rows) {
    out += std::to_string(row.subset_id);
    out += ',';
    out += std::to_string(row.query_id);
    out += ',';
    out += row.method;
    out += ',';
    out += row.delta;
    out += ',';
    out += format_double(row.value);
    out += '\n';
  }
  return out;
}

ScoreTable ScoreTable::from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  ScoreTable table;
  bool header = true;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != "subset_id,query_id,method,delta,value") {
        throw IngestError("ScoreTable: unexpected header: " + line);
      }
      header = false;
      continue;
    }
    std::stringstream ls(line);
    ScoreRow row;
    std::string cell;
    try {
      std::getline(ls, cell, ',');
      row.subset_id = std::stoi(cell);
      std::getline(ls, cell, ',');
      row.query_id = std::stoi(cell);
      std::getline(ls, row.method, ',');
      std::getline(ls, row.delta, ',');
      std::getline(ls, cell, ',');
      row.value = std::stod(cell);
    } catch (const std::exception&) {
      throw IngestError("ScoreTable: unparsable row " + std::to_string(line_no));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<double> ScoreTable::values(const std::string& method, const std::string& delta,
                                       int query_id) const {
  std::vector<double> out;
  for (const auto& row : rows) {
    if (row.method == method && row.delta == delta && row.query_id == query_id) {
      out.push_back(row.value);
    }
  }
  return out;
}

std::vector<int> ScoreTable::subset_ids(const std::string& method, const std::string& delta,
                                        int query_id) const {
  std::vector<int> out;
  for (const auto& row : rows) {
    if (row.method == method && row.delta == delta && row.query_id == query_id) {
      out.push_back(row.subset_id);
    }
  }
  return out;
}

}  // namespace dattr::distmetrics
