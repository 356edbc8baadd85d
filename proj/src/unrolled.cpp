#include "dattr/unrolled.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dattr/rng.hpp"

namespace dattr::unrolled {

ResponseState ResponseState::zeros(std::size_t n_groups, Eigen::Index d) {
  ResponseState state;
  state.r_theta.assign(n_groups, ParamVec::Zero(d));
  state.r_velocity.assign(n_groups, ParamVec::Zero(d));
  return state;
}

const ParamVec& ResponseSet::response(const dataio::RemovalGroup& group) const {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].indices == group.indices) return responses[i];
  }
  throw ContractError("ResponseSet: unknown removal group");
}

namespace {

// Per-run buffers for the response recursion.
struct ResponseWork {
  std::vector<Dual> theta_dual;
  std::vector<Dual> grad_dual;
  ParamVec grad_plain;
  std::vector<ParamVec> u;  // -d(raw gradient)/d(group weight), per group
  modelzoo::Scratch<Dual> ws_dual;
  modelzoo::Scratch<double> ws_plain;
  std::vector<std::vector<std::uint8_t>> membership;  // group -> id -> in group

  void ensure(Eigen::Index d, std::size_t n_groups, Eigen::Index n,
              const std::vector<dataio::RemovalGroup>& groups) {
    theta_dual.resize(static_cast<std::size_t>(d));
    grad_dual.resize(static_cast<std::size_t>(d));
    grad_plain.resize(d);
    if (u.size() != n_groups) u.assign(n_groups, ParamVec::Zero(d));
    if (membership.size() != n_groups) {
      membership.assign(n_groups, std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
      for (std::size_t k = 0; k < n_groups; ++k) {
        for (int id : groups[k].indices) membership[k][static_cast<std::size_t>(id)] = 1;
      }
    }
  }
};

void response_step_impl(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                        const trainer::TrainConfig& config,
                        const trainer::WeightVector& weights,
                        const std::vector<dataio::RemovalGroup>& groups,
                        const trainer::StepContext& ctx, ResponseState& rstate,
                        ResponseWork& work) {
  const Eigen::Index d = spec.param_count();
  const std::size_t n_groups = groups.size();
  require(rstate.r_theta.size() == n_groups && rstate.r_velocity.size() == n_groups,
          "response_step: state does not match group count");
  work.ensure(d, n_groups, table.n(), groups);

  const double inv_b = 1.0 / static_cast<double>(ctx.batch.size());
  for (std::size_t k = 0; k < n_groups; ++k) work.u[k].setZero();

  for (int id : ctx.batch) {
    const double w = weights.w[id];
    const auto ex = table.example(id);
    bool plain_grad_ready = false;
    for (std::size_t k = 0; k < n_groups; ++k) {
      const bool in_group = work.membership[k][static_cast<std::size_t>(id)] != 0;
      if (w != 0.0) {
        // One forward-over-reverse pass yields both the per-example gradient
        // and its curvature product with this group's response.
        const ParamVec& r = rstate.r_theta[k];
        for (Eigen::Index i = 0; i < d; ++i) {
          work.theta_dual[static_cast<std::size_t>(i)] = Dual((*ctx.theta)[i], r[i]);
          work.grad_dual[static_cast<std::size_t>(i)] = Dual(0.0, 0.0);
        }
        modelzoo::loss_backprop(spec, work.theta_dual.data(), ex, Dual(1.0),
                                work.grad_dual.data(), work.ws_dual);
        ParamVec& u = work.u[k];
        const double hw = w * inv_b;
        if (in_group) {
          for (Eigen::Index i = 0; i < d; ++i) {
            const Dual g = work.grad_dual[static_cast<std::size_t>(i)];
            u[i] += hw * g.d - inv_b * g.v;
          }
        } else {
          for (Eigen::Index i = 0; i < d; ++i) {
            u[i] += hw * work.grad_dual[static_cast<std::size_t>(i)].d;
          }
        }
      } else if (in_group) {
        // Fully removed example: only the direct gradient term survives.
        if (!plain_grad_ready) {
          work.grad_plain.setZero();
          modelzoo::loss_backprop(spec, ctx.theta->data(), ex, 1.0, work.grad_plain.data(),
                                  work.ws_plain);
          plain_grad_ready = true;
        }
        work.u[k] -= inv_b * work.grad_plain;
      }
    }
  }

  // Clipping Jacobian at the raw batch gradient.
  const ParamVec& g = *ctx.raw_gradient;
  const double scale = trainer::clip_scale(g, config.clip_norm);
  const bool clip_active = scale < 1.0;
  const double g_norm2 = clip_active ? g.squaredNorm() : 0.0;

  for (std::size_t k = 0; k < n_groups; ++k) {
    ParamVec& u = work.u[k];
    if (config.weight_decay != 0.0) u += config.weight_decay * rstate.r_theta[k];
    if (clip_active) {
      const double radial = g.dot(u) / g_norm2;
      u = scale * (u - radial * g);
    }
    ParamVec& s = rstate.r_velocity[k];
    if (config.momentum != 0.0) {
      s = config.momentum * s + u;
    } else {
      s = u;
    }
    rstate.r_theta[k] -= ctx.lr * s;
    if (!all_finite(rstate.r_theta[k])) {
      throw DivergenceError("response_step: non-finite response at iteration " +
                            std::to_string(ctx.t) + " for group " + std::to_string(k));
    }
  }
}

}  // namespace

void response_step(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                   const trainer::TrainConfig& config, const trainer::WeightVector& weights,
                   const std::vector<dataio::RemovalGroup>& groups,
                   const trainer::StepContext& ctx, ResponseState& rstate) {
  ResponseWork work;
  response_step_impl(spec, table, config, weights, groups, ctx, rstate, work);
}

ResponseSet unrolled_run(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                         const trainer::TrainConfig& config, std::uint64_t seed,
                         const std::vector<dataio::RemovalGroup>& groups,
                         const UnrolledHooks& hooks) {
  require(!groups.empty(), "unrolled_run: groups must be nonempty");
  for (const auto& group : groups) {
    for (int id : group.indices) {
      require(id >= 0 && id < table.n(), "unrolled_run: group id out of range");
    }
  }
  const auto weights = trainer::WeightVector::ones(table.n());
  ResponseState rstate = ResponseState::zeros(groups.size(), spec.param_count());
  ResponseWork work;

  const trainer::StepCallback step_cb = [&](const trainer::StepContext& ctx) {
    if (hooks.on_step) hooks.on_step(ctx.t, *ctx.theta, rstate);
    response_step_impl(spec, table, config, weights, groups, ctx, rstate, work);
  };

  ResponseSet rset;
  rset.theta_final = trainer::train_run(spec, table, config, weights, seed, {}, step_cb);
  rset.groups = groups;
  rset.responses = std::move(rstate.r_theta);
  rset.seed = seed;
  rset.config_hash = config.hash();
  return rset;
}

ParamVec closed_form_response(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                              const trainer::TrainConfig& config,
                              const std::vector<ParamVec>& trajectory,
                              const dataio::BatchSchedule& schedule,
                              const dataio::RemovalGroup& group) {
  if (config.momentum != 0.0 || config.weight_decay != 0.0 || config.clip_norm.has_value()) {
    throw ContractError("closed_form_response: only vanilla SGD is supported");
  }
  const Eigen::Index d = spec.param_count();
  ParamVec total = ParamVec::Zero(d);
  const int iters = static_cast<int>(trajectory.size());
  require(schedule.iters >= iters, "closed_form_response: schedule shorter than trajectory");

  const double inv_b = 1.0 / static_cast<double>(config.batch_size);
  modelzoo::Scratch<double> ws;
  std::vector<Dual> theta_dual(static_cast<std::size_t>(d));
  std::vector<Dual> grad_dual(static_cast<std::size_t>(d));
  modelzoo::Scratch<Dual> ws_dual;

  for (int t = 0; t < iters; ++t) {
    ParamVec seed_term = ParamVec::Zero(d);
    bool hit = false;
    for (int id : schedule.batch(t)) {
      if (group.contains(id)) {
        modelzoo::loss_backprop(spec, trajectory[static_cast<std::size_t>(t)].data(),
                                table.example(id), 1.0, seed_term.data(), ws);
        hit = true;
      }
    }
    if (!hit) continue;
    seed_term *= trainer::lr_at(config, t) * inv_b;

    // Propagate through the remaining steps' curvature factors.
    for (int l = t; l + 1 < iters; ++l) {
      const double coeff = trainer::lr_at(config, l + 1) * inv_b;
      ParamVec hv = ParamVec::Zero(d);
      for (int id : schedule.batch(l + 1)) {
        for (Eigen::Index i = 0; i < d; ++i) {
          theta_dual[static_cast<std::size_t>(i)] =
              Dual(trajectory[static_cast<std::size_t>(l + 1)][i], seed_term[i]);
          grad_dual[static_cast<std::size_t>(i)] = Dual(0.0, 0.0);
        }
        modelzoo::loss_backprop(spec, theta_dual.data(), table.example(id), Dual(1.0),
                                grad_dual.data(), ws_dual);
        for (Eigen::Index i = 0; i < d; ++i) hv[i] += grad_dual[static_cast<std::size_t>(i)].d;
      }
      seed_term -= coeff * hv;
    }
    total += seed_term;
  }
  return total;
}

ParamVec predict_removed_params(const ParamVec& theta_final, const ResponseSet& rset,
                                const dataio::RemovalGroup& group) {
  return theta_final + rset.response(group);
}

double predict_measurement(const ParamVec& theta_final, const ResponseSet& rset,
                           const dataio::RemovalGroup& group,
                           const modelzoo::MeasurementSpec& mspec,
                           const modelzoo::ModelSpec& spec) {
  const modelzoo::MeasurementField field(mspec, spec);
  ParamVec grad_m(theta_final.size());
  field.gradient(theta_final, grad_m);
  return field.value(theta_final) + grad_m.dot(rset.response(group));
}

void save_response_set(const std::string& json_path, const std::string& bin_path,
                       const ResponseSet& rset) {
  nlohmann::ordered_json meta;
  meta["seed"] = rset.seed;
  meta["config_hash"] = rset.config_hash;
  meta["dim"] = rset.theta_final.size();
  meta["groups"] = nlohmann::ordered_json::array();
  for (const auto& group : rset.groups) meta["groups"].push_back(group.indices);
  std::ofstream jout(json_path);
  if (!jout) throw IngestError("save_response_set: cannot open " + json_path);
  jout << meta.dump(2) << "\n";

  std::ofstream bout(bin_path, std::ios::binary);
  if (!bout) throw IngestError("save_response_set: cannot open " + bin_path);
  auto write_vec = [&bout](const ParamVec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &v[i], sizeof(bits));
      for (int b = 0; b < 8; ++b) bout.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  };
  write_vec(rset.theta_final);
  for (const auto& r : rset.responses) write_vec(r);
}

ResponseSet load_response_set(const std::string& json_path, const std::string& bin_path) {
  std::ifstream jin(json_path);
  if (!jin) throw IngestError("load_response_set: cannot open " + json_path);
  nlohmann::json meta = nlohmann::json::parse(jin);

  ResponseSet rset;
  rset.seed = meta.at("seed").get<std::uint64_t>();
  rset.config_hash = meta.at("config_hash").get<std::uint64_t>();
  const Eigen::Index d = meta.at("dim").get<Eigen::Index>();
  for (const auto& g : meta.at("groups")) {
    dataio::RemovalGroup group;
    group.indices = g.get<std::vector<int>>();
    rset.groups.push_back(std::move(group));
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IngestError("load_response_set: cannot open " + bin_path);
  auto read_vec = [&bin, d](ParamVec& v) {
    v.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        const int c = bin.get();
        if (c == EOF) throw IngestError("load_response_set: truncated payload");
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
      }
      std::memcpy(&v[i], &bits, sizeof(double));
    }
  };
  read_vec(rset.theta_final);
  rset.responses.resize(rset.groups.size());
  for (auto& r : rset.responses) read_vec(r);
  return rset;
}

}  // namespace dattr::unrolled
