#include "dattr/numcore.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <vector>

#include "dattr/parallel.hpp"

#ifdef DATTR_USE_LAPACKE
#include <lapacke.h>
#endif

namespace dattr::numcore {

namespace {

void check_finite(const ParamVec& v, const char* op) {
  if (!all_finite(v)) throw NumericError(std::string(op) + ": non-finite value encountered");
}

}  // namespace

HessianMatrix::HessianMatrix(const Eigen::MatrixXd& raw) {
  require(raw.rows() == raw.cols(), "HessianMatrix: matrix must be square");
  const double norm = raw.norm();
  const double asym = (raw - raw.transpose()).norm();
  raw_asymmetry_ = norm > 0.0 ? asym / norm : asym;
  m_ = 0.5 * (raw + raw.transpose());
}

ParamVec grad(const ScalarField& f, const ParamVec& theta) {
  require(theta.size() == f.dim(), "grad: theta dimension mismatch");
  check_finite(theta, "grad");
  ParamVec out(theta.size());
  f.gradient(theta, out);
  check_finite(out, "grad");
  return out;
}

ParamVec jvp(const VectorField& f, const ParamVec& theta, const ParamVec& v) {
  require(theta.size() == f.in_dim(), "jvp: theta dimension mismatch");
  require(v.size() == f.in_dim(), "jvp: tangent dimension mismatch");
  check_finite(theta, "jvp");
  ParamVec out, tangent_out;
  f.apply_dual(theta, v, out, tangent_out);
  check_finite(tangent_out, "jvp");
  return tangent_out;
}

ParamVec hvp(const ScalarField& loss, const ParamVec& theta, const ParamVec& v) {
  require(theta.size() == loss.dim(), "hvp: theta dimension mismatch");
  require(v.size() == loss.dim(), "hvp: tangent dimension mismatch");
  check_finite(theta, "hvp");
  ParamVec g, hv;
  loss.gradient_dual(theta, v, g, hv);
  check_finite(hv, "hvp");
  return hv;
}

HessianMatrix dense_hessian(const ScalarField& loss, const ParamVec& theta, Eigen::Index cap) {
  const Eigen::Index d = loss.dim();
  require(theta.size() == d, "dense_hessian: theta dimension mismatch");
  if (d > cap) {
    throw CapacityError("dense_hessian: dimension " + std::to_string(d) + " exceeds cap " +
                        std::to_string(cap) + "; use block-diagonal mode");
  }
  Eigen::MatrixXd h(d, d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t j) {
    ParamVec basis = ParamVec::Zero(d);
    basis[static_cast<Eigen::Index>(j)] = 1.0;
    ParamVec g, col;
    loss.gradient_dual(theta, basis, g, col);
    h.col(static_cast<Eigen::Index>(j)) = col;
  });
  if (!h.allFinite()) throw NumericError("dense_hessian: non-finite value encountered");
  return HessianMatrix(h);
}

SpectralDecomp eigendecompose(const Eigen::MatrixXd& sym) {
  require(sym.rows() == sym.cols(), "eigendecompose: matrix must be square");
  SpectralDecomp out;
#ifdef DATTR_USE_LAPACKE
  const lapack_int n = static_cast<lapack_int>(sym.rows());
  out.eigenvectors = sym;
  out.eigenvalues.resize(n);
  const lapack_int info =
      LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, out.eigenvectors.data(), n,
                     out.eigenvalues.data());
  if (info != 0) throw NumericError("eigendecompose: dsyevd failed with info " + std::to_string(info));
#else
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecompose: solver failed");
  out.eigenvalues = solver.eigenvalues();
  out.eigenvectors = solver.eigenvectors();
#endif
  return out;
}

SpectralDecomp eigendecompose(const HessianMatrix& h) { return eigendecompose(h.mat()); }

namespace {

// Shared thresholding rule: keep index i if |lambda_i + damping| >=
// rel_tol * max_j |lambda_j + damping|.
std::vector<bool> kept_mask(const SpectralDecomp& decomp, double rel_tol, double damping) {
  require(rel_tol > 0.0 && rel_tol < 1.0, "pinv_apply: rel_tol must be in (0, 1)");
  require(std::isfinite(damping), "pinv_apply: damping must be finite");
  const Eigen::Index n = decomp.eigenvalues.size();
  double max_abs = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    max_abs = std::max(max_abs, std::abs(decomp.eigenvalues[i] + damping));
  }
  std::vector<bool> kept(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    kept[static_cast<std::size_t>(i)] =
        std::abs(decomp.eigenvalues[i] + damping) >= rel_tol * max_abs && max_abs > 0.0;
  }
  return kept;
}

}  // namespace

ParamVec pinv_apply(const SpectralDecomp& decomp, double rel_tol, double damping,
                    const ParamVec& v) {
  require(v.size() == decomp.eigenvalues.size(), "pinv_apply: vector dimension mismatch");
  const auto kept = kept_mask(decomp, rel_tol, damping);
  bool any = false;
  for (bool k : kept) any = any || k;
  if (!any) throw DegenerateSpectrumError("pinv_apply: all eigenvalues dropped by threshold");

  ParamVec coeffs = decomp.eigenvectors.transpose() * v;
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
    if (kept[static_cast<std::size_t>(i)]) {
      coeffs[i] /= decomp.eigenvalues[i] + damping;
    } else {
      coeffs[i] = 0.0;
    }
  }
  return decomp.eigenvectors * coeffs;
}

std::pair<ParamVec, ParamVec> span_projection(const SpectralDecomp& decomp, double rel_tol,
                                              const ParamVec& v) {
  require(v.size() == decomp.eigenvalues.size(), "span_projection: vector dimension mismatch");
  const auto kept = kept_mask(decomp, rel_tol, 0.0);
  ParamVec coeffs = decomp.eigenvectors.transpose() * v;
  ParamVec span_coeffs = coeffs;
  ParamVec null_coeffs = coeffs;
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
    if (kept[static_cast<std::size_t>(i)]) {
      null_coeffs[i] = 0.0;
    } else {
      span_coeffs[i] = 0.0;
    }
  }
  return {decomp.eigenvectors * span_coeffs, decomp.eigenvectors * null_coeffs};
}

}  // namespace dattr::numcore
