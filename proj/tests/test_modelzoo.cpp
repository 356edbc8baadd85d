#include <doctest.h>

#include <cmath>

#include "dattr/modelzoo.hpp"
#include "dattr/numcore.hpp"
#include "dattr/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace dattr;
using namespace dattr::modelzoo;

TEST_SUITE("modelzoo") {

TEST_CASE("spec validation and parameter counts") {
  CHECK_THROWS_AS(mlp_spec({4, 1}, LossKind::half_mse), ContractError);
  CHECK_THROWS_AS(mlp_spec({4, 0, 1}, LossKind::half_mse), ContractError);
  const auto spec = mlp_spec({8, 64, 64, 1}, LossKind::half_mse);
  CHECK(spec.param_count() == 9 * 64 + 65 * 64 + 65);
  const auto glm = glm_spec(8);
  CHECK(glm.param_count() == 9);
}

TEST_CASE("init is deterministic in the seed and biases start at zero") {
  const auto spec = mlp_spec({3, 4, 2}, LossKind::half_mse);
  const ParamVec a = init_params(spec, 42);
  const ParamVec b = init_params(spec, 42);
  CHECK((a - b).norm() == 0.0);
  const ParamVec c = init_params(spec, 43);
  CHECK((a - c).norm() > 0.0);
  // Bias slots: after the first 12 weights, 4 biases; after 8 more weights,
  // 2 biases.
  for (int i = 12; i < 16; ++i) CHECK(a[i] == 0.0);
  for (int i = 24; i < 26; ++i) CHECK(a[i] == 0.0);
}

TEST_CASE("init weight sample mean is near zero at scale") {
  const auto spec = glm_spec(10000);
  const ParamVec theta = init_params(spec, 7);
  const double bound = std::sqrt(6.0 / (10000 + 1));
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    CHECK(std::abs(theta[i]) <= bound);
    mean += theta[i];
  }
  mean /= 10000.0;
  // Uniform(-b, b): sd of the sample mean is b/sqrt(3 n).
  const double sigma = bound / std::sqrt(3.0 * 10000.0);
  CHECK(std::abs(mean) < 3.0 * sigma);
}

TEST_CASE("forward on zero parameters is zero") {
  const auto spec = mlp_spec({3, 4, 2}, LossKind::half_mse);
  Eigen::VectorXd x(3);
  x << 1.0, -2.0, 0.5;
  const Eigen::VectorXd out = forward(spec, ParamVec::Zero(spec.param_count()), x);
  CHECK(out.norm() == doctest::Approx(0.0));
}

TEST_CASE("single affine layer with identity weights passes x through") {
  const auto spec = glm_spec(1);
  ParamVec theta(2);
  theta << 1.0, 0.0;  // w = 1, b = 0
  Eigen::VectorXd x(1);
  x << 3.25;
  CHECK(forward(spec, theta, x)[0] == doctest::Approx(3.25));
}

TEST_CASE("forward dimension mismatch is a contract error") {
  const auto spec = glm_spec(2);
  Eigen::VectorXd x(3);
  x.setZero();
  CHECK_THROWS_AS(forward(spec, ParamVec::Zero(3), x), ContractError);
}

TEST_CASE("half-mse per-example loss values") {
  const auto spec = glm_spec(1);
  ParamVec theta(2);
  theta << 0.0, 1.0;  // constant prediction 1
  Eigen::VectorXd x(1);
  x << 0.0;
  double y = 1.0;
  CHECK(per_example_loss(spec, theta, Example::regression(x, y)) == doctest::Approx(0.0));
  y = 0.0;
  CHECK(per_example_loss(spec, theta, Example::regression(x, y)) == doctest::Approx(0.5));
}

TEST_CASE("cross-entropy of uniform logits over 10 classes is ln 10") {
  const auto spec = mlp_spec({2, 3, 10}, LossKind::cross_entropy);
  const ParamVec theta = ParamVec::Zero(spec.param_count());  // all logits zero
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  const double loss = per_example_loss(spec, theta, Example::classification(x, 4));
  CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-9));
}

TEST_CASE("cross-entropy rejects labels outside the class range") {
  const auto spec = mlp_spec({2, 3, 4}, LossKind::cross_entropy);
  const ParamVec theta = ParamVec::Zero(spec.param_count());
  Eigen::VectorXd x(2);
  x.setZero();
  CHECK_THROWS_AS(per_example_loss(spec, theta, Example::classification(x, 4)), ContractError);
  CHECK_THROWS_AS(per_example_loss(spec, theta, Example::classification(x, -1)), ContractError);
}

TEST_CASE("losses are nonnegative on random inputs") {
  Rng rng(99);
  const auto reg = fixtures::tiny_mlp(3, 4, 2);
  const auto cls = mlp_spec({3, 4, 5}, LossKind::cross_entropy);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(3), y(2);
    for (int i = 0; i < 3; ++i) x[i] = rng.normal();
    for (int i = 0; i < 2; ++i) y[i] = rng.normal();
    ParamVec tr = init_params(reg, 1000 + trial);
    ParamVec tc = init_params(cls, 2000 + trial);
    CHECK(per_example_loss(reg, tr, {x.data(), 3, y.data(), 2, -1}) >= 0.0);
    CHECK(per_example_loss(cls, tc, Example::classification(x, trial % 5)) >= 0.0);
  }
}

TEST_CASE("cross-entropy falls when the true-class logit rises") {
  const auto spec = mlp_spec({2, 3, 4}, LossKind::cross_entropy);
  Rng rng(123);
  Eigen::VectorXd x(2);
  x << 0.5, -0.5;
  for (int trial = 0; trial < 10; ++trial) {
    ParamVec theta = init_params(spec, 3000 + trial);
    const int label = trial % 4;
    const double before = per_example_loss(spec, theta, Example::classification(x, label));
    // Raise the true-class logit via its output bias, leaving other logits
    // untouched.
    const Eigen::Index bias_off = spec.param_count() - 4 + label;
    theta[bias_off] += 0.5;
    const double after = per_example_loss(spec, theta, Example::classification(x, label));
    CHECK(after < before);
  }
}

TEST_CASE("output scales linearly with the last layer") {
  const auto spec = fixtures::tiny_mlp(3, 4, 2);
  ParamVec theta = init_params(spec, 5);
  Eigen::VectorXd x(3);
  x << 0.2, -1.0, 0.7;
  const Eigen::VectorXd base = forward(spec, theta, x);
  const Eigen::Index last = (3 + 1) * 4;  // first-layer block size
  ParamVec scaled = theta;
  scaled.segment(last, spec.param_count() - last) *= 3.0;
  const Eigen::VectorXd out = forward(spec, scaled, x);
  CHECK((out - 3.0 * base).norm() < 1e-12);
}

TEST_CASE("measurements and their gradients") {
  const auto spec = fixtures::tiny_mlp(3, 4, 1);

  MeasurementSpec output_probe;
  output_probe.kind = MeasurementSpec::Kind::model_output;
  output_probe.query = Eigen::VectorXd::Zero(3);
  output_probe.query << 0.1, 0.5, -0.3;
  CHECK(measurement(output_probe, spec, ParamVec::Zero(spec.param_count())) ==
        doctest::Approx(0.0));

  MeasurementSpec loss_probe;
  loss_probe.kind = MeasurementSpec::Kind::loss_at_query;
  loss_probe.query = output_probe.query;
  const ParamVec theta = init_params(spec, 17);
  loss_probe.target = forward(spec, theta, loss_probe.query)[0];  // perfect prediction
  CHECK(measurement(loss_probe, spec, theta) == doctest::Approx(0.0));

  MeasurementField field(output_probe, spec);
  const ParamVec g = numcore::grad(field, theta);
  const ParamVec g_fd = oracles::fd_gradient(field, theta, 1e-5);
  CHECK((g - g_fd).norm() / g_fd.norm() < 1e-6);
}

}  // TEST_SUITE
