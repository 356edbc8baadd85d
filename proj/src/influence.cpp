#include "dattr/influence.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dattr/parallel.hpp"

namespace dattr::influence {

std::vector<ParamBlock> param_blocks(const modelzoo::ModelSpec& spec) {
  std::vector<ParamBlock> blocks;
  Eigen::Index off = 0;
  for (int l = 0; l + 1 < static_cast<int>(spec.layer_dims.size()); ++l) {
    const Eigen::Index in = spec.layer_dims[static_cast<std::size_t>(l)];
    const Eigen::Index out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
    blocks.push_back({off, in * out, "layer" + std::to_string(l) + ".weight"});
    blocks.push_back({off + in * out, out, "layer" + std::to_string(l) + ".bias"});
    off += (in + 1) * out;
  }
  return blocks;
}

std::vector<numcore::HessianMatrix> block_diagonal_hessian(const modelzoo::ModelSpec& spec,
                                                           const dataio::DatasetTable& table,
                                                           const trainer::WeightVector& weights,
                                                           const ParamVec& theta) {
  const trainer::TrainingLossField loss(spec, table, weights, 0.0);
  const auto blocks = param_blocks(spec);
  const Eigen::Index d = spec.param_count();
  require(theta.size() == d, "block_diagonal_hessian: parameter count mismatch");

  std::vector<Eigen::MatrixXd> raw(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    raw[b].resize(blocks[b].size, blocks[b].size);
  }
  // One hvp per parameter; only the owning block's rows are kept.
  std::vector<std::pair<std::size_t, Eigen::Index>> cols;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Eigen::Index j = 0; j < blocks[b].size; ++j) cols.emplace_back(b, j);
  }
  parallel_for(cols.size(), [&](std::size_t c) {
    const auto [b, j] = cols[c];
    ParamVec basis = ParamVec::Zero(d);
    basis[blocks[b].offset + j] = 1.0;
    ParamVec g, col;
    loss.gradient_dual(theta, basis, g, col);
    raw[b].col(j) = col.segment(blocks[b].offset, blocks[b].size);
  });

  std::vector<numcore::HessianMatrix> out;
  out.reserve(raw.size());
  for (auto& m : raw) out.emplace_back(m);
  return out;
}

InfluenceEngine::InfluenceEngine(const modelzoo::ModelSpec& spec,
                                 const dataio::DatasetTable& table,
                                 trainer::WeightVector weights, ParamVec theta_star,
                                 HessianMode mode)
    : spec_(spec), table_(table), weights_(std::move(weights)), theta_(std::move(theta_star)),
      mode_(mode) {
  require(theta_.size() == spec_.param_count(), "InfluenceEngine: parameter count mismatch");
  require(mode_.rel_tol > 0.0 && mode_.rel_tol < 1.0, "InfluenceEngine: rel_tol must be in (0,1)");
  data_loss_ = std::make_unique<trainer::TrainingLossField>(spec_, table_, weights_, 0.0);
  if (mode_.kind == HessianMode::Kind::exact) {
    exact_decomp_ = numcore::eigendecompose(numcore::dense_hessian(*data_loss_, theta_));
  } else {
    blocks_ = param_blocks(spec_);
    const auto block_mats = block_diagonal_hessian(spec_, table_, weights_, theta_);
    block_decomps_.reserve(block_mats.size());
    for (const auto& m : block_mats) block_decomps_.push_back(numcore::eigendecompose(m));
  }
}

ParamVec InfluenceEngine::apply_pinv(const ParamVec& v) const {
  require(v.size() == theta_.size(), "apply_pinv: dimension mismatch");
  if (mode_.kind == HessianMode::Kind::exact) {
    return numcore::pinv_apply(*exact_decomp_, mode_.rel_tol, mode_.damping, v);
  }
  ParamVec out = ParamVec::Zero(v.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto seg = v.segment(blocks_[b].offset, blocks_[b].size);
    out.segment(blocks_[b].offset, blocks_[b].size) =
        numcore::pinv_apply(block_decomps_[b], mode_.rel_tol, mode_.damping, seg);
  }
  return out;
}

ParamVec InfluenceEngine::apply_hessian(const ParamVec& v) const {
  ParamVec g, hv;
  data_loss_->gradient_dual(theta_, v, g, hv);
  if (mode_.damping != 0.0) hv += mode_.damping * v;
  return hv;
}

ParamVec InfluenceEngine::per_example_gradient(int id) const {
  modelzoo::Scratch<double> ws;
  ParamVec g = ParamVec::Zero(theta_.size());
  modelzoo::loss_backprop(spec_, theta_.data(), table_.example(id), 1.0, g.data(), ws);
  return g;
}

ParamVec InfluenceEngine::group_gradient(const dataio::RemovalGroup& group) const {
  modelzoo::Scratch<double> ws;
  ParamVec g = ParamVec::Zero(theta_.size());
  const double inv_n = 1.0 / static_cast<double>(table_.n());
  for (int id : group.indices) {
    require(id >= 0 && id < table_.n(), "group_gradient: id out of range");
    modelzoo::loss_backprop(spec_, theta_.data(), table_.example(id), inv_n, g.data(), ws);
  }
  return g;
}

InfluenceResponse InfluenceEngine::response(const dataio::RemovalGroup& group) const {
  InfluenceResponse out;
  if (group.indices.empty()) {
    out.r = ParamVec::Zero(theta_.size());
    return out;
  }
  out.r = apply_pinv(group_gradient(group));
  return out;
}

const numcore::SpectralDecomp& InfluenceEngine::decomp() const {
  require(exact_decomp_.has_value(), "InfluenceEngine: decomposition only exists in exact mode");
  return *exact_decomp_;
}

InfluenceResponse if_response(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                              const ParamVec& theta_star, const dataio::RemovalGroup& group,
                              const HessianMode& mode) {
  const InfluenceEngine engine(spec, table, trainer::WeightVector::ones(table.n()), theta_star,
                               mode);
  return engine.response(group);
}

double calibrate_alpha(const VecApply& pinv_apply, const VecApply& hessian_apply,
                       std::span<const ParamVec> probes) {
  if (probes.empty()) throw CalibrationError("calibrate_alpha: no probe vectors");
  double num = 0.0;
  double den = 0.0;
  for (const ParamVec& v : probes) {
    const ParamVec u = pinv_apply(hessian_apply(v));
    num += u.dot(v);
    den += u.squaredNorm();
  }
  if (den == 0.0) throw CalibrationError("calibrate_alpha: all probe images are zero");
  const double alpha = num / den;
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw CalibrationError("calibrate_alpha: non-positive scale " + std::to_string(alpha) +
                           " rejected");
  }
  return alpha;
}

void save_influence_set(const std::string& json_path, const std::string& bin_path,
                        const InfluenceSet& iset) {
  nlohmann::ordered_json meta;
  meta["seed"] = iset.seed;
  meta["mode"] = iset.mode.kind_name();
  meta["rel_tol"] = iset.mode.rel_tol;
  meta["damping"] = iset.mode.damping;
  if (iset.alpha) {
    meta["alpha"] = *iset.alpha;
  } else {
    meta["alpha"] = nullptr;
  }
  const Eigen::Index d = iset.responses.empty() ? 0 : iset.responses.front().size();
  meta["dim"] = d;
  meta["groups"] = nlohmann::ordered_json::array();
  for (const auto& group : iset.groups) meta["groups"].push_back(group.indices);
  std::ofstream jout(json_path);
  if (!jout) throw IngestError("save_influence_set: cannot open " + json_path);
  jout << meta.dump(2) << "\n";

  std::ofstream bout(bin_path, std::ios::binary);
  if (!bout) throw IngestError("save_influence_set: cannot open " + bin_path);
  for (const auto& r : iset.responses) {
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &r[i], sizeof(bits));
      for (int b = 0; b < 8; ++b) bout.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
}

InfluenceSet load_influence_set(const std::string& json_path, const std::string& bin_path) {
  std::ifstream jin(json_path);
  if (!jin) throw IngestError("load_influence_set: cannot open " + json_path);
  nlohmann::json meta = nlohmann::json::parse(jin);

  InfluenceSet iset;
  iset.seed = meta.at("seed").get<std::uint64_t>();
  iset.mode.kind = meta.at("mode").get<std::string>() == "exact"
                       ? HessianMode::Kind::exact
                       : HessianMode::Kind::block_diagonal;
  iset.mode.rel_tol = meta.at("rel_tol").get<double>();
  iset.mode.damping = meta.at("damping").get<double>();
  if (!meta.at("alpha").is_null()) iset.alpha = meta.at("alpha").get<double>();
  const Eigen::Index d = meta.at("dim").get<Eigen::Index>();
  for (const auto& g : meta.at("groups")) {
    dataio::RemovalGroup group;
    group.indices = g.get<std::vector<int>>();
    iset.groups.push_back(std::move(group));
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IngestError("load_influence_set: cannot open " + bin_path);
  iset.responses.assign(iset.groups.size(), ParamVec(d));
  for (auto& r : iset.responses) {
    for (Eigen::Index i = 0; i < d; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        const int c = bin.get();
        if (c == EOF) throw IngestError("load_influence_set: truncated payload");
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
      }
      std::memcpy(&r[i], &bits, sizeof(double));
    }
  }
  return iset;
}

}  // namespace dattr::influence
