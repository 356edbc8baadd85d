#include "dattr/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dattr/rng.hpp"

namespace dattr::trainer {

void TrainConfig::validate() const {
  require(base_lr > 0.0 && std::isfinite(base_lr), "TrainConfig: base_lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
  if (clip_norm) require(*clip_norm > 0.0, "TrainConfig: clip_norm must be positive");
  require(iters >= 1, "TrainConfig: iters must be >= 1");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(warmup_frac >= 0.0 && warmup_frac < 1.0, "TrainConfig: warmup_frac must be in [0, 1)");
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = fnv1a("trainconfig");
  auto mix_double = [&h](double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    h = fnv1a_u64(bits, h);
  };
  mix_double(base_lr);
  mix_double(momentum);
  mix_double(weight_decay);
  mix_double(clip_norm ? *clip_norm : -1.0);
  h = fnv1a_u64(static_cast<std::uint64_t>(iters), h);
  h = fnv1a_u64(static_cast<std::uint64_t>(batch_size), h);
  mix_double(warmup_frac);
  h = fnv1a_u64(batch_mode == dataio::BatchMode::iid ? 0 : 1, h);
  return h;
}

int TrainConfig::warmup_iters() const {
  return std::max(1, static_cast<int>(std::llround(warmup_frac * iters)));
}

WeightVector WeightVector::removing(Eigen::Index n, const dataio::RemovalGroup& group) {
  WeightVector weights = ones(n);
  for (int id : group.indices) {
    require(id >= 0 && id < n, "WeightVector: removal id out of range");
    weights.w[id] = 0.0;
  }
  return weights;
}

void WeightVector::validate(Eigen::Index n) const {
  require(w.size() == n, "WeightVector: length mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    require(w[i] >= 0.0 && w[i] <= 1.0, "WeightVector: weights must be in [0, 1]");
  }
}

double lr_at(const TrainConfig& config, int t) {
  require(t >= 0 && t < config.iters, "lr_at: iteration out of range");
  const double ramp = static_cast<double>(t + 1) / config.warmup_iters();
  return config.base_lr * std::min(1.0, ramp);
}

double batch_gradient(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                      const ParamVec& theta, std::span<const int> batch,
                      const WeightVector& weights, double weight_decay, ParamVec& g_out,
                      modelzoo::Scratch<double>& ws) {
  require(!batch.empty(), "batch_gradient: batch must be nonempty");
  g_out.setZero(theta.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (int id : batch) {
    const double w = weights.w[id];
    if (w == 0.0) continue;
    const auto ex = table.example(id);
    loss += w * inv_b *
            modelzoo::loss_backprop(spec, theta.data(), ex, w * inv_b, g_out.data(), ws);
  }
  if (weight_decay != 0.0) g_out += weight_decay * theta;
  return loss;
}

double clip_scale(const ParamVec& g, const std::optional<double>& clip_norm) {
  if (!clip_norm) return 1.0;
  const double norm = g.norm();
  if (norm <= *clip_norm || norm == 0.0) return 1.0;
  return *clip_norm / norm;
}

void sgd_step(ParamVec& theta, OptimState& state, const ParamVec& g, double lr,
              const TrainConfig& config) {
  const double scale = clip_scale(g, config.clip_norm);
  if (config.momentum != 0.0) {
    state.velocity = config.momentum * state.velocity + scale * g;
  } else {
    state.velocity = scale * g;
  }
  theta -= lr * state.velocity;
}

ParamVec train_run(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                   const TrainConfig& config, const WeightVector& weights, std::uint64_t seed,
                   const TrainHooks& hooks, const StepCallback& step_cb) {
  config.validate();
  table.validate();
  weights.validate(table.n());
  require(config.batch_size <= table.n(), "train_run: batch size exceeds dataset size");

  ParamVec theta = modelzoo::init_params(spec, seed);
  OptimState state{ParamVec::Zero(theta.size())};
  const dataio::BatchSchedule schedule =
      dataio::batch_schedule(static_cast<int>(table.n()), config.batch_size, config.iters,
                             config.batch_mode, derive_seed(seed, "schedule"));

  modelzoo::Scratch<double> ws;
  ParamVec g(theta.size());
  for (int t = 0; t < config.iters; ++t) {
    const auto batch = schedule.batch(t);
    const double loss = batch_gradient(spec, table, theta, batch, weights,
                                       config.weight_decay, g, ws);
    if (!std::isfinite(loss) || !all_finite(g)) {
      throw DivergenceError("train_run: non-finite loss at iteration " + std::to_string(t));
    }
    const double lr = lr_at(config, t);
    if (hooks.on_step) hooks.on_step(t, theta, state, batch);
    if (step_cb) {
      StepContext ctx;
      ctx.t = t;
      ctx.lr = lr;
      ctx.theta = &theta;
      ctx.state = &state;
      ctx.raw_gradient = &g;
      ctx.batch = batch;
      step_cb(ctx);
    }
    sgd_step(theta, state, g, lr, config);
    if (!all_finite(theta)) {
      throw DivergenceError("train_run: non-finite parameters at iteration " + std::to_string(t));
    }
  }
  return theta;
}

TrainingLossField::TrainingLossField(modelzoo::ModelSpec spec, const dataio::DatasetTable& table,
                                     WeightVector weights, double weight_decay)
    : spec_(std::move(spec)), table_(table), weights_(std::move(weights)),
      weight_decay_(weight_decay) {
  weights_.validate(table.n());
}

double TrainingLossField::value(const ParamVec& theta) const {
  modelzoo::Scratch<double> ws;
  const double inv_n = 1.0 / static_cast<double>(table_.n());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < table_.n(); ++i) {
    const double w = weights_.w[i];
    if (w == 0.0) continue;
    loss += w * inv_n *
            modelzoo::loss_backprop(spec_, theta.data(), table_.example(i), 1.0,
                                    static_cast<double*>(nullptr), ws);
  }
  return loss + 0.5 * weight_decay_ * theta.squaredNorm();
}

void TrainingLossField::gradient(const ParamVec& theta, ParamVec& out) const {
  modelzoo::Scratch<double> ws;
  out.setZero(theta.size());
  const double inv_n = 1.0 / static_cast<double>(table_.n());
  for (Eigen::Index i = 0; i < table_.n(); ++i) {
    const double w = weights_.w[i];
    if (w == 0.0) continue;
    modelzoo::loss_backprop(spec_, theta.data(), table_.example(i), w * inv_n, out.data(), ws);
  }
  if (weight_decay_ != 0.0) out += weight_decay_ * theta;
}

void TrainingLossField::gradient_dual(const ParamVec& theta, const ParamVec& tangent,
                                      ParamVec& grad_out, ParamVec& hvp_out) const {
  const Eigen::Index d = theta.size();
  std::vector<Dual> th(static_cast<std::size_t>(d));
  std::vector<Dual> g(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) th[i] = Dual(theta[i], tangent[i]);
  modelzoo::Scratch<Dual> ws;
  const double inv_n = 1.0 / static_cast<double>(table_.n());
  for (Eigen::Index i = 0; i < table_.n(); ++i) {
    const double w = weights_.w[i];
    if (w == 0.0) continue;
    modelzoo::loss_backprop(spec_, th.data(), table_.example(i), Dual(w * inv_n), g.data(), ws);
  }
  grad_out.resize(d);
  hvp_out.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    grad_out[i] = g[i].v + weight_decay_ * theta[i];
    hvp_out[i] = g[i].d + weight_decay_ * tangent[i];
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'A', 'T', 'R', 'C', 'K', 'P', '1'};

void write_u64_le(std::ostream& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(std::istream& in) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw IngestError("checkpoint: truncated file");
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return x;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamVec& theta, std::uint64_t spec_hash,
                     std::uint64_t iteration, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u64_le(out, spec_hash);
  write_u64_le(out, iteration);
  write_u64_le(out, seed);
  write_u64_le(out, static_cast<std::uint64_t>(theta.size()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &theta[i], sizeof(bits));
    write_u64_le(out, bits);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IngestError("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.spec_hash = read_u64_le(in);
  ckpt.iteration = read_u64_le(in);
  ckpt.seed = read_u64_le(in);
  const std::uint64_t count = read_u64_le(in);
  ckpt.theta.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t bits = read_u64_le(in);
    double x;
    std::memcpy(&x, &bits, sizeof(x));
    ckpt.theta[static_cast<Eigen::Index>(i)] = x;
  }
  return ckpt;
}

}  // namespace dattr::trainer
