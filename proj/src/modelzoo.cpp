#include "dattr/modelzoo.hpp"

namespace dattr::modelzoo {

ModelSpec mlp_spec(std::vector<int> layer_dims, LossKind loss_kind, Activation activation) {
  require(layer_dims.size() >= 3, "mlp_spec: MLP needs at least one hidden layer");
  for (int d : layer_dims) require(d >= 1, "mlp_spec: all dims must be >= 1");
  ModelSpec spec;
  spec.layer_dims = std::move(layer_dims);
  spec.activation = activation;
  spec.loss_kind = loss_kind;
  return spec;
}

ModelSpec glm_spec(int input_dim, LossKind loss_kind) {
  require(input_dim >= 1, "glm_spec: input_dim must be >= 1");
  ModelSpec spec;
  spec.layer_dims = {input_dim, 1};
  spec.loss_kind = loss_kind;
  return spec;
}

ParamVec init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVec theta = ParamVec::Zero(spec.param_count());
  Rng rng(derive_seed(seed, "init"));
  Eigen::Index off = 0;
  for (int l = 0; l + 1 < static_cast<int>(spec.layer_dims.size()); ++l) {
    const int fan_in = spec.layer_dims[l];
    const int fan_out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(fan_in) * fan_out; ++k) {
      theta[off + k] = rng.uniform(-bound, bound);
    }
    off += static_cast<Eigen::Index>(fan_in + 1) * fan_out;  // biases stay zero
  }
  return theta;
}

void validate_example(const ModelSpec& spec, const Example& ex) {
  require(ex.x_dim == spec.input_dim(), "example: feature dimension mismatch");
  if (spec.loss_kind == LossKind::half_mse) {
    require(ex.y != nullptr && ex.y_dim == spec.output_dim(),
            "example: target dimension must equal output dimension");
  } else {
    require(ex.label >= 0 && ex.label < spec.output_dim(),
            "example: class label outside output range");
  }
}

Eigen::VectorXd forward(const ModelSpec& spec, const ParamVec& theta, const Eigen::VectorXd& x) {
  require(theta.size() == spec.param_count(), "forward: parameter count mismatch");
  require(x.size() == spec.input_dim(), "forward: input dimension mismatch");
  Scratch<double> ws;
  forward_kernel(spec, theta.data(), x.data(), ws);
  return Eigen::Map<const Eigen::VectorXd>(ws.pre.back().data(), spec.output_dim());
}

double per_example_loss(const ModelSpec& spec, const ParamVec& theta, const Example& ex) {
  require(theta.size() == spec.param_count(), "per_example_loss: parameter count mismatch");
  validate_example(spec, ex);
  Scratch<double> ws;
  return loss_backprop(spec, theta.data(), ex, 1.0, static_cast<double*>(nullptr), ws);
}

double measurement(const MeasurementSpec& mspec, const ModelSpec& spec, const ParamVec& theta) {
  require(mspec.query.size() == spec.input_dim(), "measurement: query dimension mismatch");
  require(theta.size() == spec.param_count(), "measurement: parameter count mismatch");
  Scratch<double> ws;
  if (mspec.kind == MeasurementSpec::Kind::model_output) {
    require(mspec.output_index >= 0 && mspec.output_index < spec.output_dim(),
            "measurement: output index out of range");
    return output_backprop(spec, theta.data(), mspec.query.data(), mspec.output_index, 1.0,
                           static_cast<double*>(nullptr), ws);
  }
  Example ex;
  ex.x = mspec.query.data();
  ex.x_dim = mspec.query.size();
  ex.y = &mspec.target;
  ex.y_dim = 1;
  ex.label = mspec.label;
  validate_example(spec, ex);
  return loss_backprop(spec, theta.data(), ex, 1.0, static_cast<double*>(nullptr), ws);
}

MeasurementField::MeasurementField(MeasurementSpec mspec, ModelSpec spec)
    : mspec_(std::move(mspec)), spec_(std::move(spec)) {
  require(mspec_.query.size() == spec_.input_dim(), "measurement: query dimension mismatch");
  if (mspec_.kind == MeasurementSpec::Kind::model_output) {
    require(mspec_.output_index >= 0 && mspec_.output_index < spec_.output_dim(),
            "measurement: output index out of range");
  } else if (spec_.loss_kind == LossKind::cross_entropy) {
    require(mspec_.label >= 0 && mspec_.label < spec_.output_dim(),
            "measurement: label outside class range");
  }
}

}  // namespace dattr::modelzoo
