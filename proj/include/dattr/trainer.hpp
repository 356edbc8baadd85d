#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "dattr/dataio.hpp"
#include "dattr/fields.hpp"
#include "dattr/modelzoo.hpp"

namespace dattr::trainer {

// Full deterministic description of one training run's hyperparameters.
// Weight decay enters as an L2 loss term so the Hessian seen by influence
// functions includes the same +wd*I shift the optimizer saw.
struct TrainConfig {
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::optional<double> clip_norm = 1.0;
  int iters = 580;
  int batch_size = 32;
  double warmup_frac = 0.1;
  dataio::BatchMode batch_mode = dataio::BatchMode::epoch_shuffle;

  void validate() const;
  std::uint64_t hash() const;
  int warmup_iters() const;
};

struct OptimState {
  ParamVec velocity;
};

// Per-example weights in [0, 1]; zero means the example is fully removed.
struct WeightVector {
  Eigen::VectorXd w;

  static WeightVector ones(Eigen::Index n) { return {Eigen::VectorXd::Ones(n)}; }
  static WeightVector removing(Eigen::Index n, const dataio::RemovalGroup& group);

  void validate(Eigen::Index n) const;
};

// eta_t = base_lr * min(1, (t+1) / warmup_iters), warmup then constant.
double lr_at(const TrainConfig& config, int t);

// g = (1/B) sum_{n in batch} w_n grad l_n(theta) + weight_decay * theta.
// Returns the weighted mean batch data loss. Zero-weight terms are skipped
// entirely, so a fully removed example leaves the arithmetic identical to a
// run over the filtered batch.
double batch_gradient(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                      const ParamVec& theta, std::span<const int> batch,
                      const WeightVector& weights, double weight_decay, ParamVec& g_out,
                      modelzoo::Scratch<double>& ws);

// Gradient clipping scale: min(1, clip_norm / ||g||).
double clip_scale(const ParamVec& g, const std::optional<double>& clip_norm);

// Heavy-ball step: v' = momentum * v + clip(g); theta' = theta - lr * v'.
void sgd_step(ParamVec& theta, OptimState& state, const ParamVec& g, double lr,
              const TrainConfig& config);

// Observers are called before each update is applied, with the iteration's
// pre-step parameters, optimizer state and batch.
struct TrainHooks {
  std::function<void(int t, const ParamVec& theta, const OptimState& state,
                     std::span<const int> batch)>
      on_step;
};

// Internal per-step record shared with the unrolled engine: everything the
// response recursion needs about iteration t before the update is applied.
struct StepContext {
  int t = 0;
  double lr = 0.0;
  const ParamVec* theta = nullptr;     // pre-step parameters
  const OptimState* state = nullptr;   // pre-step velocity
  const ParamVec* raw_gradient = nullptr;  // before clipping
  std::span<const int> batch;
};

using StepCallback = std::function<void(const StepContext&)>;

// Deterministic training loop over the seed-derived schedule. The step
// callback (when set) runs in lock-step before each update.
ParamVec train_run(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                   const TrainConfig& config, const WeightVector& weights, std::uint64_t seed,
                   const TrainHooks& hooks = {}, const StepCallback& step_cb = {});

// (1/N) sum_n w_n l_n(theta) + (wd/2) ||theta||^2 as a differentiable field;
// the loss whose Hessian influence functions invert.
class TrainingLossField : public ScalarField {
 public:
  TrainingLossField(modelzoo::ModelSpec spec, const dataio::DatasetTable& table,
                    WeightVector weights, double weight_decay);

  Eigen::Index dim() const override { return spec_.param_count(); }
  double value(const ParamVec& theta) const override;
  void gradient(const ParamVec& theta, ParamVec& out) const override;
  void gradient_dual(const ParamVec& theta, const ParamVec& tangent, ParamVec& grad_out,
                     ParamVec& hvp_out) const override;

 private:
  modelzoo::ModelSpec spec_;
  const dataio::DatasetTable& table_;
  WeightVector weights_;
  double weight_decay_;
};

// Checkpoint file: magic, spec hash, iteration, seed, then the flat f64
// parameter array, all little-endian.
void save_checkpoint(const std::string& path, const ParamVec& theta, std::uint64_t spec_hash,
                     std::uint64_t iteration, std::uint64_t seed);

struct Checkpoint {
  ParamVec theta;
  std::uint64_t spec_hash = 0;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace dattr::trainer
