#pragma once

#include <Eigen/Core>
#include <utility>

#include "dattr/common.hpp"
#include "dattr/fields.hpp"

namespace dattr::numcore {

// Dense symmetric matrix, symmetrized on construction. The asymmetry of the
// raw input (relative to its norm) is retained for diagnostics.
class HessianMatrix {
 public:
  explicit HessianMatrix(const Eigen::MatrixXd& raw);

  const Eigen::MatrixXd& mat() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }
  double raw_asymmetry() const { return raw_asymmetry_; }

 private:
  Eigen::MatrixXd m_;
  double raw_asymmetry_ = 0.0;
};

struct SpectralDecomp {
  ParamVec eigenvalues;        // ascending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalue order
};

// Exact reverse-mode gradient of f at theta.
ParamVec grad(const ScalarField& f, const ParamVec& theta);

// Exact directional derivative dF(theta)[v].
ParamVec jvp(const VectorField& f, const ParamVec& theta, const ParamVec& v);

// Exact Hessian-vector product of a scalar loss (forward-over-reverse).
ParamVec hvp(const ScalarField& loss, const ParamVec& theta, const ParamVec& v);

inline constexpr Eigen::Index kDenseHessianCap = 8192;

// Dense Hessian assembled column-by-column from hvp against basis vectors,
// then symmetrized. Columns may be evaluated in parallel; results are
// written to fixed positions so the matrix is schedule-independent.
HessianMatrix dense_hessian(const ScalarField& loss, const ParamVec& theta,
                            Eigen::Index cap = kDenseHessianCap);

SpectralDecomp eigendecompose(const HessianMatrix& h);
SpectralDecomp eigendecompose(const Eigen::MatrixXd& sym);

// Thresholded pseudo-inverse application. Eigenvalues are shifted by
// `damping`; shifted eigenvalues with magnitude below rel_tol times the
// largest shifted magnitude are dropped. Returns sum over kept components of
// q_i (q_i^T v) / (lambda_i + damping).
ParamVec pinv_apply(const SpectralDecomp& decomp, double rel_tol, double damping,
                    const ParamVec& v);

// Splits v into its components inside and outside the kept-eigenvalue
// subspace (same thresholding rule as pinv_apply with zero damping).
std::pair<ParamVec, ParamVec> span_projection(const SpectralDecomp& decomp, double rel_tol,
                                              const ParamVec& v);

}  // namespace dattr::numcore
