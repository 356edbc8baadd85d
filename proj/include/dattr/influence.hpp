#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dattr/numcore.hpp"
#include "dattr/trainer.hpp"

namespace dattr::influence {

// Hessian handling for influence-function responses. Damping shifts the
// spectrum of the data-loss Hessian; with damping equal to the training
// weight decay the inverted matrix is the Hessian of the actual optimized
// objective.
struct HessianMode {
  enum class Kind { exact, block_diagonal };
  Kind kind = Kind::exact;
  double rel_tol = 1e-4;
  double damping = 0.0;

  std::string kind_name() const {
    return kind == Kind::exact ? "exact" : "block-diagonal";
  }
};

struct InfluenceResponse {
  ParamVec r;
  std::optional<double> alpha;
};

// Contiguous parameter ranges for per-layer weight and bias blocks.
struct ParamBlock {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  std::string name;
};

std::vector<ParamBlock> param_blocks(const modelzoo::ModelSpec& spec);

// Diagonal blocks of the exact data-loss Hessian, one per weight matrix and
// one per bias vector (damping is applied spectrally downstream).
std::vector<numcore::HessianMatrix> block_diagonal_hessian(const modelzoo::ModelSpec& spec,
                                                           const dataio::DatasetTable& table,
                                                           const trainer::WeightVector& weights,
                                                           const ParamVec& theta);

// Shared eigendecomposition for one (theta*, mode) pair; groups and probes
// reuse it read-only.
class InfluenceEngine {
 public:
  InfluenceEngine(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                  trainer::WeightVector weights, ParamVec theta_star, HessianMode mode);

  // Thresholded pseudo-inverse of the damped Hessian applied to v. In
  // block-diagonal mode each block is thresholded against its own largest
  // shifted eigenvalue.
  ParamVec apply_pinv(const ParamVec& v) const;

  // Damped Hessian-vector product (exact, regardless of mode).
  ParamVec apply_hessian(const ParamVec& v) const;

  // r(G) = (1/N) sum_{k in G} pinv(H) grad l_k(theta*).
  InfluenceResponse response(const dataio::RemovalGroup& group) const;

  // Mean per-example gradient over a group, scaled by 1/N.
  ParamVec group_gradient(const dataio::RemovalGroup& group) const;

  ParamVec per_example_gradient(int id) const;

  const numcore::SpectralDecomp& decomp() const;  // exact mode only
  const HessianMode& mode() const { return mode_; }
  const ParamVec& theta() const { return theta_; }

 private:
  const modelzoo::ModelSpec spec_;
  const dataio::DatasetTable& table_;
  trainer::WeightVector weights_;
  ParamVec theta_;
  HessianMode mode_;
  std::optional<numcore::SpectralDecomp> exact_decomp_;
  std::vector<ParamBlock> blocks_;
  std::vector<numcore::SpectralDecomp> block_decomps_;
  std::unique_ptr<trainer::TrainingLossField> data_loss_;
};

// Single-shot convenience wrapper around InfluenceEngine.
InfluenceResponse if_response(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                              const ParamVec& theta_star, const dataio::RemovalGroup& group,
                              const HessianMode& mode);

using VecApply = std::function<ParamVec(const ParamVec&)>;

// Closed-form minimizer of sum_i ||alpha * pinv(H~) H v_i - v_i||^2 over the
// probe set; the calibrated inverse applier is alpha * pinv(H~).
double calibrate_alpha(const VecApply& pinv_apply, const VecApply& hessian_apply,
                       std::span<const ParamVec> probes);

// Serialized responses for a batch of groups (mirrors the unrolled layout,
// with mode and alpha recorded in the metadata).
struct InfluenceSet {
  std::vector<dataio::RemovalGroup> groups;
  std::vector<ParamVec> responses;
  HessianMode mode;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
};

void save_influence_set(const std::string& json_path, const std::string& bin_path,
                        const InfluenceSet& iset);
InfluenceSet load_influence_set(const std::string& json_path, const std::string& bin_path);

}  // namespace dattr::influence
