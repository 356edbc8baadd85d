#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dattr/common.hpp"
#include "dattr/dual.hpp"
#include "dattr/fields.hpp"
#include "dattr/rng.hpp"

namespace dattr::modelzoo {

enum class Activation { gelu };
enum class LossKind { half_mse, cross_entropy };

// An affine stack: input, hidden layers with GeLU, affine output head.
// A GLM is the depth-one special case (no hidden layers).
struct ModelSpec {
  std::vector<int> layer_dims;  // input, hidden..., output
  Activation activation = Activation::gelu;
  LossKind loss_kind = LossKind::half_mse;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int affine_layers() const { return static_cast<int>(layer_dims.size()) - 1; }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      n += static_cast<Eigen::Index>(layer_dims[l] + 1) * layer_dims[l + 1];
    }
    return n;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("modelspec");
    for (int d : layer_dims) h = fnv1a_u64(static_cast<std::uint64_t>(d), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(activation), h);
    h = fnv1a_u64(static_cast<std::uint64_t>(loss_kind), h);
    return h;
  }
};

// MLP: at least one hidden layer, all dims >= 1.
ModelSpec mlp_spec(std::vector<int> layer_dims, LossKind loss_kind,
                   Activation activation = Activation::gelu);

// GLM: single affine layer onto a scalar output.
ModelSpec glm_spec(int input_dim, LossKind loss_kind = LossKind::half_mse);

// One training or query example. Regression examples carry a target vector
// (usually a scalar); classification examples carry a class label.
struct Example {
  const double* x = nullptr;
  Eigen::Index x_dim = 0;
  const double* y = nullptr;
  Eigen::Index y_dim = 0;
  int label = -1;

  static Example regression(const Eigen::VectorXd& x, const double& y) {
    return {x.data(), x.size(), &y, 1, -1};
  }
  static Example classification(const Eigen::VectorXd& x, int label) {
    return {x.data(), x.size(), nullptr, 0, label};
  }
};

// Scalar probe of a trained model.
struct MeasurementSpec {
  enum class Kind { model_output, loss_at_query };
  Kind kind = Kind::model_output;
  Eigen::VectorXd query;
  int output_index = 0;  // logit selector for vector outputs
  double target = 0.0;   // loss_at_query, regression
  int label = -1;        // loss_at_query, classification
};

// ---------------------------------------------------------------------------
// Kernels, templated on the scalar type (double or Dual). Parameter layout is
// layer-major: for each affine layer, W (out x in, row-major) then b (out).
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <class S>
S gelu(S x) {
  using std::erf;
  return x * (S(0.5) * (S(1.0) + erf(x * S(kInvSqrt2))));
}

template <class S>
S gelu_deriv(S x) {
  using std::erf;
  using std::exp;
  const S phi = S(kInvSqrt2Pi) * exp(S(-0.5) * x * x);
  const S cdf = S(0.5) * (S(1.0) + erf(x * S(kInvSqrt2)));
  return cdf + x * phi;
}

}  // namespace detail

// Reusable per-call buffers; resized lazily, safe to share across calls on
// one thread.
template <class S>
struct Scratch {
  std::vector<std::vector<S>> pre;    // pre-activations per affine layer
  std::vector<std::vector<S>> act;    // post-activations per hidden layer
  std::vector<std::vector<S>> delta;  // backprop buffers

  void ensure(const ModelSpec& spec) {
    const std::size_t layers = static_cast<std::size_t>(spec.affine_layers());
    if (pre.size() != layers) {
      pre.assign(layers, {});
      act.assign(layers, {});
      delta.assign(layers, {});
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = static_cast<std::size_t>(spec.layer_dims[l + 1]);
      if (pre[l].size() != out) {
        pre[l].assign(out, S(0.0));
        act[l].assign(out, S(0.0));
        delta[l].assign(out, S(0.0));
      }
    }
  }
};

// Forward pass; writes the output-layer pre-activations into scratch.pre.back().
template <class S>
void forward_kernel(const ModelSpec& spec, const S* theta, const double* x, Scratch<S>& ws) {
  ws.ensure(spec);
  const int layers = spec.affine_layers();
  Eigen::Index off = 0;
  for (int l = 0; l < layers; ++l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    const S* w = theta + off;
    const S* b = theta + off + static_cast<Eigen::Index>(in) * out;
    const S* h = l == 0 ? nullptr : ws.act[l - 1].data();
    for (int o = 0; o < out; ++o) {
      S acc = b[o];
      const S* wrow = w + static_cast<Eigen::Index>(o) * in;
      if (l == 0) {
        for (int i = 0; i < in; ++i) acc += wrow[i] * S(x[i]);
      } else {
        for (int i = 0; i < in; ++i) acc += wrow[i] * h[i];
      }
      ws.pre[l][static_cast<std::size_t>(o)] = acc;
    }
    if (l + 1 < layers) {
      for (int o = 0; o < out; ++o) {
        ws.act[l][static_cast<std::size_t>(o)] = detail::gelu(ws.pre[l][static_cast<std::size_t>(o)]);
      }
    }
    off += static_cast<Eigen::Index>(in + 1) * out;
  }
}

// Backward pass from output deltas already stored in scratch.delta.back().
// Accumulates scale * dL/dtheta into grad (when non-null).
template <class S>
void backward_kernel(const ModelSpec& spec, const S* theta, const double* x, S scale, S* grad,
                     Scratch<S>& ws) {
  const int layers = spec.affine_layers();
  std::vector<Eigen::Index> offs(static_cast<std::size_t>(layers));
  Eigen::Index off = 0;
  for (int l = 0; l < layers; ++l) {
    offs[static_cast<std::size_t>(l)] = off;
    off += static_cast<Eigen::Index>(spec.layer_dims[l] + 1) * spec.layer_dims[l + 1];
  }
  for (int l = layers - 1; l >= 0; --l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    const Eigen::Index w_off = offs[static_cast<std::size_t>(l)];
    const Eigen::Index b_off = w_off + static_cast<Eigen::Index>(in) * out;
    const S* h = l == 0 ? nullptr : ws.act[l - 1].data();
    if (grad != nullptr) {
      for (int o = 0; o < out; ++o) {
        const S d = scale * ws.delta[l][static_cast<std::size_t>(o)];
        S* gw = grad + w_off + static_cast<Eigen::Index>(o) * in;
        if (l == 0) {
          for (int i = 0; i < in; ++i) gw[i] += d * S(x[i]);
        } else {
          for (int i = 0; i < in; ++i) gw[i] += d * h[i];
        }
        grad[b_off + o] += d;
      }
    }
    if (l > 0) {
      const S* w = theta + w_off;
      std::vector<S>& dprev = ws.delta[l - 1];
      for (int i = 0; i < in; ++i) dprev[static_cast<std::size_t>(i)] = S(0.0);
      for (int o = 0; o < out; ++o) {
        const S d = ws.delta[l][static_cast<std::size_t>(o)];
        const S* wrow = w + static_cast<Eigen::Index>(o) * in;
        for (int i = 0; i < in; ++i) dprev[static_cast<std::size_t>(i)] += d * wrow[i];
      }
      for (int i = 0; i < in; ++i) {
        dprev[static_cast<std::size_t>(i)] =
            dprev[static_cast<std::size_t>(i)] *
            detail::gelu_deriv(ws.pre[l - 1][static_cast<std::size_t>(i)]);
      }
    }
  }
}

// Per-example loss with optional gradient accumulation (reverse mode).
// Returns the loss value.
template <class S>
S loss_backprop(const ModelSpec& spec, const S* theta, const Example& ex, S scale, S* grad,
                Scratch<S>& ws) {
  forward_kernel(spec, theta, ex.x, ws);
  const int out = spec.output_dim();
  const std::vector<S>& logits = ws.pre.back();
  S loss(0.0);
  if (spec.loss_kind == LossKind::half_mse) {
    for (int o = 0; o < out; ++o) {
      const S r = logits[static_cast<std::size_t>(o)] - S(ex.y[o]);
      loss += S(0.5) * r * r;
      ws.delta.back()[static_cast<std::size_t>(o)] = r;
    }
  } else {
    using std::exp;
    using std::log;
    S max_logit = logits[0];
    for (int o = 1; o < out; ++o) {
      if (logits[static_cast<std::size_t>(o)] > max_logit) max_logit = logits[static_cast<std::size_t>(o)];
    }
    S z(0.0);
    for (int o = 0; o < out; ++o) z += exp(logits[static_cast<std::size_t>(o)] - max_logit);
    const S log_z = log(z) + max_logit;
    loss = log_z - logits[static_cast<std::size_t>(ex.label)];
    if (grad != nullptr) {
      for (int o = 0; o < out; ++o) {
        S p = exp(logits[static_cast<std::size_t>(o)] - log_z);
        if (o == ex.label) p -= S(1.0);
        ws.delta.back()[static_cast<std::size_t>(o)] = p;
      }
    }
  }
  if (grad != nullptr) backward_kernel(spec, theta, ex.x, scale, grad, ws);
  return loss;
}

// Derivative of one output component (reverse mode through the stack only).
template <class S>
S output_backprop(const ModelSpec& spec, const S* theta, const double* x, int output_index,
                  S scale, S* grad, Scratch<S>& ws) {
  forward_kernel(spec, theta, x, ws);
  if (grad != nullptr) {
    for (int o = 0; o < spec.output_dim(); ++o) {
      ws.delta.back()[static_cast<std::size_t>(o)] = S(o == output_index ? 1.0 : 0.0);
    }
    backward_kernel(spec, theta, x, scale, grad, ws);
  }
  return ws.pre.back()[static_cast<std::size_t>(output_index)];
}

// ---------------------------------------------------------------------------
// Convenience operations.
// ---------------------------------------------------------------------------

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
ParamVec init_params(const ModelSpec& spec, std::uint64_t seed);

Eigen::VectorXd forward(const ModelSpec& spec, const ParamVec& theta, const Eigen::VectorXd& x);

double per_example_loss(const ModelSpec& spec, const ParamVec& theta, const Example& ex);

double measurement(const MeasurementSpec& mspec, const ModelSpec& spec, const ParamVec& theta);

void validate_example(const ModelSpec& spec, const Example& ex);

// Measurement as a differentiable scalar field over parameters.
class MeasurementField : public BackpropField<MeasurementField> {
 public:
  MeasurementField(MeasurementSpec mspec, ModelSpec spec);

  Eigen::Index dim() const override { return spec_.param_count(); }

  template <class S>
  S eval(const S* theta) const {
    Scratch<S> ws;
    return eval_with(theta, static_cast<S*>(nullptr), ws);
  }

  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    Scratch<S> ws;
    return eval_with(theta, grad, ws);
  }

  const MeasurementSpec& mspec() const { return mspec_; }

 private:
  template <class S>
  S eval_with(const S* theta, S* grad, Scratch<S>& ws) const {
    if (mspec_.kind == MeasurementSpec::Kind::model_output) {
      return output_backprop(spec_, theta, mspec_.query.data(), mspec_.output_index, S(1.0),
                             grad, ws);
    }
    Example ex;
    ex.x = mspec_.query.data();
    ex.x_dim = mspec_.query.size();
    ex.y = &mspec_.target;
    ex.y_dim = 1;
    ex.label = mspec_.label;
    return loss_backprop(spec_, theta, ex, S(1.0), grad, ws);
  }

  MeasurementSpec mspec_;
  ModelSpec spec_;
};

// Single-example loss as a differentiable scalar field over parameters.
class PerExampleLossField : public BackpropField<PerExampleLossField> {
 public:
  PerExampleLossField(ModelSpec spec, Eigen::VectorXd x, Eigen::VectorXd y, int label = -1)
      : spec_(std::move(spec)), x_(std::move(x)), y_(std::move(y)) {
    ex_.x = x_.data();
    ex_.x_dim = x_.size();
    ex_.y = y_.size() > 0 ? y_.data() : nullptr;
    ex_.y_dim = y_.size();
    ex_.label = label;
    validate_example(spec_, ex_);
  }

  Eigen::Index dim() const override { return spec_.param_count(); }

  template <class S>
  S eval(const S* theta) const {
    Scratch<S> ws;
    return loss_backprop(spec_, theta, ex_, S(1.0), static_cast<S*>(nullptr), ws);
  }

  template <class S>
  S eval_grad(const S* theta, S* grad) const {
    Scratch<S> ws;
    return loss_backprop(spec_, theta, ex_, S(1.0), grad, ws);
  }

 private:
  ModelSpec spec_;
  Eigen::VectorXd x_;
  Eigen::VectorXd y_;
  Example ex_;
};

}  // namespace dattr::modelzoo
