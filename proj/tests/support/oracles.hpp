#pragma once

// Independent reference computations used to freeze expected values. These
// deliberately avoid the library's implementation paths.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dattr/fields.hpp"

namespace oracles {

// Central finite-difference gradient of a scalar field.
inline dattr::ParamVec fd_gradient(const dattr::ScalarField& f, const dattr::ParamVec& theta,
                                   double h = 1e-5) {
  dattr::ParamVec g(theta.size());
  dattr::ParamVec probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double fp = f.value(probe);
    probe[i] = theta[i] - h;
    const double fm = f.value(probe);
    probe[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Central finite-difference directional derivative of a vector field.
inline dattr::ParamVec fd_jvp(const dattr::VectorField& f, const dattr::ParamVec& theta,
                              const dattr::ParamVec& v, double h = 1e-5) {
  dattr::ParamVec out_p, out_m;
  f.apply(theta + h * v, out_p);
  f.apply(theta - h * v, out_m);
  return (out_p - out_m) / (2.0 * h);
}

// Central finite-difference Hessian-vector product via gradient differences.
inline dattr::ParamVec fd_hvp(const dattr::ScalarField& f, const dattr::ParamVec& theta,
                              const dattr::ParamVec& v, double h = 1e-5) {
  dattr::ParamVec gp(theta.size()), gm(theta.size());
  f.gradient(theta + h * v, gp);
  f.gradient(theta - h * v, gm);
  return (gp - gm) / (2.0 * h);
}

// Equal-size 1-D W2 by explicit enumeration of all pairings (n <= 6).
inline double brute_w2_equal(std::vector<double> p, std::vector<double> q) {
  std::vector<std::size_t> perm(q.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - q[perm[i]];
      acc += d * d;
    }
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(p.size()));
}

// Unequal-size 1-D W2 by replicating each sample lcm/m (lcm/n) times and
// matching sorted copies.
inline double brute_w2_unequal(std::vector<double> p, std::vector<double> q) {
  const auto m = p.size();
  const auto n = q.size();
  const auto l = std::lcm(m, n);
  std::vector<double> pe, qe;
  pe.reserve(l);
  qe.reserve(l);
  for (double x : p) pe.insert(pe.end(), l / m, x);
  for (double x : q) qe.insert(qe.end(), l / n, x);
  std::sort(pe.begin(), pe.end());
  std::sort(qe.begin(), qe.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < l; ++i) acc += (pe[i] - qe[i]) * (pe[i] - qe[i]);
  return std::sqrt(acc / static_cast<double>(l));
}

// Spearman for tie-free data via the rank-difference formula.
inline double spearman_formula(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto n = xs.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[order[i]] = static_cast<double>(i + 1);
    return r;
  };
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

}  // namespace oracles
