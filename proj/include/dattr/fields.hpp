#pragma once

#include <Eigen/Core>
#include <vector>

#include "dattr/common.hpp"
#include "dattr/dual.hpp"

namespace dattr {

// A twice-differentiable scalar field over flat parameter vectors.
//
// Implementations provide a hand-written reverse-mode gradient that is
// templated on the scalar type; evaluating that gradient on Dual scalars
// yields exact Hessian-vector products. BackpropField below stamps out the
// virtual interface from a single templated routine.
class ScalarField {
 public:
  virtual ~ScalarField() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double value(const ParamVec& theta) const = 0;

  // Reverse-mode gradient, overwriting `out`.
  virtual void gradient(const ParamVec& theta, ParamVec& out) const = 0;

  // Gradient evaluated along theta + eps*tangent: writes the gradient at
  // theta into grad_out and its directional derivative (the Hessian-vector
  // product) into hvp_out.
  virtual void gradient_dual(const ParamVec& theta, const ParamVec& tangent,
                             ParamVec& grad_out, ParamVec& hvp_out) const = 0;
};

// A differentiable map between flat vectors, with exact forward-mode
// directional derivatives.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual Eigen::Index in_dim() const = 0;
  virtual Eigen::Index out_dim() const = 0;
  virtual void apply(const ParamVec& theta, ParamVec& out) const = 0;
  virtual void apply_dual(const ParamVec& theta, const ParamVec& tangent,
                          ParamVec& out, ParamVec& jvp_out) const = 0;
};

// CRTP adaptor: Derived supplies
//   template <class S> S eval(const S* theta) const;
//   template <class S> S eval_grad(const S* theta, S* grad_accum) const;
// where eval_grad accumulates the gradient and returns the value.
template <class Derived>
class BackpropField : public ScalarField {
 public:
  double value(const ParamVec& theta) const override {
    return self().template eval<double>(theta.data());
  }

  void gradient(const ParamVec& theta, ParamVec& out) const override {
    out.setZero(dim());
    self().template eval_grad<double>(theta.data(), out.data());
  }

  void gradient_dual(const ParamVec& theta, const ParamVec& tangent,
                     ParamVec& grad_out, ParamVec& hvp_out) const override {
    const Eigen::Index d = dim();
    std::vector<Dual> th(static_cast<std::size_t>(d));
    std::vector<Dual> g(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) th[i] = Dual(theta[i], tangent[i]);
    self().template eval_grad<Dual>(th.data(), g.data());
    grad_out.resize(d);
    hvp_out.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      grad_out[i] = g[i].v;
      hvp_out[i] = g[i].d;
    }
  }

 private:
  const Derived& self() const { return *static_cast<const Derived*>(this); }
};

// f(theta) = 1/2 theta^T A theta + b^T theta + c with symmetric A.
class QuadraticField : public BackpropField<QuadraticField> {
 public:
  QuadraticField(Eigen::MatrixXd a, ParamVec b, double c = 0.0)
      : a_(std::move(a)), b_(std::move(b)), c_(c) {
    require(a_.rows() == a_.cols() && a_.rows() == b_.size(),
            "QuadraticField: inconsistent dimensions");
  }
  explicit QuadraticField(Eigen::MatrixXd a)
      : QuadraticField(std::move(a), ParamVec::Zero(a.rows())) {}

  Eigen::Index dim() const override { return b_.size(); }

  template <class S>
  S eval(const S* theta) const {
    S acc = c_;
    for (Eigen::Index i = 0; i < b_.size(); ++i) {
      S row = b_[i];
      for (Eigen::Index j = 0; j < b_.size(); ++j) row += S(0.5 * a_(i, j)) * theta[j];
      acc += theta[i] * row;
    }
    return acc;
  }

  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    for (Eigen::Index i = 0; i < b_.size(); ++i) {
      S gi = b_[i];
      for (Eigen::Index j = 0; j < b_.size(); ++j) gi += S(a_(i, j)) * theta[j];
      grad[i] += gi;
    }
    return eval(theta);
  }

 private:
  Eigen::MatrixXd a_;
  ParamVec b_;
  double c_;
};

// F(theta) = A theta + b.
class LinearMapField : public VectorField {
 public:
  LinearMapField(Eigen::MatrixXd a, ParamVec b) : a_(std::move(a)), b_(std::move(b)) {
    require(a_.rows() == b_.size(), "LinearMapField: inconsistent dimensions");
  }
  explicit LinearMapField(Eigen::MatrixXd a)
      : LinearMapField(std::move(a), ParamVec::Zero(a.rows())) {}

  Eigen::Index in_dim() const override { return a_.cols(); }
  Eigen::Index out_dim() const override { return a_.rows(); }

  void apply(const ParamVec& theta, ParamVec& out) const override { out = a_ * theta + b_; }

  void apply_dual(const ParamVec& theta, const ParamVec& tangent, ParamVec& out,
                  ParamVec& jvp_out) const override {
    out = a_ * theta + b_;
    jvp_out = a_ * tangent;
  }

 private:
  Eigen::MatrixXd a_;
  ParamVec b_;
};

}  // namespace dattr
