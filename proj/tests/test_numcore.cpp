#include <doctest.h>

#include <Eigen/Dense>

#include "dattr/numcore.hpp"
#include "dattr/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace dattr;
using namespace dattr::numcore;

namespace {

Eigen::MatrixXd random_symmetric(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  }
  return 0.5 * (a + a.transpose());
}

ParamVec random_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  ParamVec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// 1-D quartic (theta^2 - 1)^2, second derivative 12 theta^2 - 4.
class QuarticField : public BackpropField<QuarticField> {
 public:
  Eigen::Index dim() const override { return 1; }
  template <class S>
  S eval(const S* theta) const {
    const S q = theta[0] * theta[0] - S(1.0);
    return q * q;
  }
  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    const S q = theta[0] * theta[0] - S(1.0);
    grad[0] += S(4.0) * q * theta[0];
    return q * q;
  }
};

}  // namespace

TEST_SUITE("numcore") {

TEST_CASE("grad of half squared norm is the identity") {
  QuadraticField f(Eigen::MatrixXd::Identity(2, 2));
  ParamVec theta(2);
  theta << 1.0, 2.0;
  const ParamVec g = grad(f, theta);
  CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("grad of a constant field is zero") {
  QuadraticField f(Eigen::MatrixXd::Zero(3, 3), ParamVec::Zero(3), 7.5);
  const ParamVec g = grad(f, random_vec(3, 11));
  CHECK(g.norm() == doctest::Approx(0.0));
}

TEST_CASE("mlp loss gradient matches central finite differences") {
  const auto spec = fixtures::tiny_mlp(3, 5, 2);
  Eigen::VectorXd x = random_vec(3, 21);
  Eigen::VectorXd y = random_vec(2, 22);
  modelzoo::PerExampleLossField f(spec, x, y);
  const ParamVec theta = 0.3 * random_vec(static_cast<int>(spec.param_count()), 23);
  const ParamVec g = grad(f, theta);
  const ParamVec g_fd = oracles::fd_gradient(f, theta, 1e-5);
  CHECK((g - g_fd).norm() / g_fd.norm() < 1e-6);
}

TEST_CASE("jvp of a linear map returns A v") {
  const Eigen::MatrixXd a = random_symmetric(4, 31);
  LinearMapField f(a);
  const ParamVec theta = random_vec(4, 32);
  const ParamVec v = random_vec(4, 33);
  const ParamVec jv = jvp(f, theta, v);
  CHECK((jv - a * v).norm() < 1e-14);
}

TEST_CASE("jvp of the zero tangent is zero") {
  LinearMapField f(random_symmetric(4, 41));
  CHECK(jvp(f, random_vec(4, 42), ParamVec::Zero(4)).norm() == doctest::Approx(0.0));
}

TEST_CASE("jvp rejects mismatched dimensions") {
  LinearMapField f(random_symmetric(4, 51));
  CHECK_THROWS_AS(jvp(f, random_vec(3, 52), random_vec(3, 53)), ContractError);
}

TEST_CASE("hvp of a quadratic is A v") {
  const Eigen::MatrixXd a = random_symmetric(5, 61);
  QuadraticField f(a);
  const ParamVec theta = random_vec(5, 62);
  const ParamVec v = random_vec(5, 63);
  CHECK((hvp(f, theta, v) - a * v).norm() < 1e-13);
  CHECK(hvp(f, theta, ParamVec::Zero(5)).norm() == doctest::Approx(0.0));
}

TEST_CASE("hvp equals the dense Hessian applied to v on a tiny mlp") {
  const auto spec = fixtures::tiny_mlp(2, 4, 1);
  Eigen::VectorXd x = random_vec(2, 71);
  Eigen::VectorXd y = random_vec(1, 72);
  modelzoo::PerExampleLossField f(spec, x, y);
  const ParamVec theta = 0.4 * random_vec(static_cast<int>(spec.param_count()), 73);
  const ParamVec v = random_vec(static_cast<int>(spec.param_count()), 74);
  const auto h = dense_hessian(f, theta);
  CHECK((hvp(f, theta, v) - h.mat() * v).norm() < 1e-9);
}

TEST_CASE("dense hessian of a quadratic recovers A") {
  const Eigen::MatrixXd a = random_symmetric(6, 81);
  QuadraticField f(a);
  const auto h = dense_hessian(f, random_vec(6, 82));
  CHECK((h.mat() - a).norm() < 1e-12);
}

TEST_CASE("dense hessian of the 1-D quartic at theta=1 is 8") {
  QuarticField f;
  ParamVec theta(1);
  theta << 1.0;
  const auto h = dense_hessian(f, theta);
  CHECK(h.mat()(0, 0) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("dense hessian asymmetry before symmetrization is tiny on a tiny mlp") {
  const auto spec = fixtures::tiny_mlp(2, 3, 1);
  Eigen::VectorXd x = random_vec(2, 91);
  Eigen::VectorXd y = random_vec(1, 92);
  modelzoo::PerExampleLossField f(spec, x, y);
  const ParamVec theta = 0.4 * random_vec(static_cast<int>(spec.param_count()), 93);
  const auto h = dense_hessian(f, theta);
  CHECK(h.raw_asymmetry() < 1e-10);
}

TEST_CASE("dense hessian refuses dimensions above the cap") {
  QuadraticField f(Eigen::MatrixXd::Identity(8, 8));
  CHECK_THROWS_AS(dense_hessian(f, ParamVec::Zero(8), 4), CapacityError);
}

TEST_CASE("pinv drops the null direction of diag(2, 0)") {
  Eigen::MatrixXd h(2, 2);
  h << 2.0, 0.0, 0.0, 0.0;
  const auto decomp = eigendecompose(h);
  ParamVec v(2);
  v << 1.0, 1.0;
  const ParamVec r = pinv_apply(decomp, 1e-4, 0.0, v);
  CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pinv with damping 1 on diag(2, 0) inverts the shifted spectrum") {
  Eigen::MatrixXd h(2, 2);
  h << 2.0, 0.0, 0.0, 0.0;
  const auto decomp = eigendecompose(h);
  ParamVec v(2);
  v << 1.0, 1.0;
  const ParamVec r = pinv_apply(decomp, 1e-4, 1.0, v);
  CHECK(r[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pinv of the identity is the identity") {
  const auto decomp = eigendecompose(Eigen::MatrixXd::Identity(5, 5).eval());
  const ParamVec v = random_vec(5, 101);
  CHECK((pinv_apply(decomp, 1e-4, 0.0, v) - v).norm() < 1e-13);
}

TEST_CASE("pinv rejects a fully degenerate spectrum") {
  const auto decomp = eigendecompose(Eigen::MatrixXd::Zero(3, 3).eval());
  CHECK_THROWS_AS(pinv_apply(decomp, 1e-4, 0.0, random_vec(3, 111)), DegenerateSpectrumError);
}

TEST_CASE("pinv with damping above threshold matches the exact inverse on full-rank H") {
  const Eigen::MatrixXd base = random_symmetric(6, 121);
  const Eigen::MatrixXd h = base * base.transpose() + 0.5 * Eigen::MatrixXd::Identity(6, 6);
  const auto decomp = eigendecompose(h);
  const double damping = 0.3;
  const ParamVec v = random_vec(6, 122);
  const ParamVec r = pinv_apply(decomp, 1e-10, damping, v);
  const ParamVec exact =
      (h + damping * Eigen::MatrixXd::Identity(6, 6)).ldlt().solve(v);
  CHECK((r - exact).norm() / exact.norm() < 1e-8);
}

TEST_CASE("span projection splits diag(1, 0) as expected") {
  Eigen::MatrixXd h(2, 2);
  h << 1.0, 0.0, 0.0, 0.0;
  const auto decomp = eigendecompose(h);
  ParamVec v(2);
  v << 3.0, 4.0;
  const auto [v_span, v_null] = span_projection(decomp, 1e-4, v);
  CHECK(v_span[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(v_span[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v_null[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v_null[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("span projection is pythagorean and orthogonal on random inputs") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd base = random_symmetric(5, 200 + trial);
    // Force a genuine nullspace.
    base.row(2).setZero();
    base.col(2).setZero();
    const auto decomp = eigendecompose(base);
    const ParamVec v = random_vec(5, 300 + trial);
    const auto [v_span, v_null] = span_projection(decomp, 1e-8, v);
    CHECK((v - v_span - v_null).norm() < 1e-11);
    CHECK(std::abs(v_span.dot(v_null)) < 1e-10);
    CHECK(v.squaredNorm() ==
          doctest::Approx(v_span.squaredNorm() + v_null.squaredNorm()).epsilon(1e-9));
  }
}

TEST_CASE("pinv output lies in the span subspace") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd base = random_symmetric(5, 400 + trial);
    base.row(0).setZero();
    base.col(0).setZero();
    const auto decomp = eigendecompose(base);
    const ParamVec v = random_vec(5, 500 + trial);
    const ParamVec r = pinv_apply(decomp, 1e-8, 0.0, v);
    const auto [r_span, r_null] = span_projection(decomp, 1e-8, r);
    CHECK(r_null.norm() < 1e-10 * std::max(1.0, r.norm()));
  }
}

TEST_CASE("spectral decomposition reconstructs and is orthogonal") {
  const Eigen::MatrixXd h = random_symmetric(20, 601);
  const auto decomp = eigendecompose(h);
  const Eigen::MatrixXd recon = decomp.eigenvectors *
                                decomp.eigenvalues.asDiagonal() *
                                decomp.eigenvectors.transpose();
  CHECK((recon - h).norm() / h.norm() < 1e-8);
  const Eigen::MatrixXd qtq = decomp.eigenvectors.transpose() * decomp.eigenvectors;
  CHECK((qtq - Eigen::MatrixXd::Identity(20, 20)).norm() < 1e-10);
  for (Eigen::Index i = 0; i + 1 < decomp.eigenvalues.size(); ++i) {
    CHECK(decomp.eigenvalues[i] <= decomp.eigenvalues[i + 1]);
  }
}

TEST_CASE("dense hessian is identical across worker counts") {
  const auto spec = fixtures::tiny_mlp(2, 4, 1);
  Eigen::VectorXd x = random_vec(2, 701);
  Eigen::VectorXd y = random_vec(1, 702);
  modelzoo::PerExampleLossField f(spec, x, y);
  const ParamVec theta = 0.4 * random_vec(static_cast<int>(spec.param_count()), 703);
  Eigen::MatrixXd h1, h4;
  {
    setenv("DATTR_WORKERS", "1", 1);
    h1 = dense_hessian(f, theta).mat();
  }
  {
    setenv("DATTR_WORKERS", "4", 1);
    h4 = dense_hessian(f, theta).mat();
  }
  unsetenv("DATTR_WORKERS");
  CHECK((h1 - h4).norm() == 0.0);
}

}  // TEST_SUITE
