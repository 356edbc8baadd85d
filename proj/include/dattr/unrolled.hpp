#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dattr/trainer.hpp"

namespace dattr::unrolled {

// Removal responses carried alongside a training run, one pair of vectors
// per removal group. r_theta is -d(theta_t)/d(w_G) at the run's weights, so
// exclusion of the group corresponds to adding r_theta; r_velocity is the
// matching derivative of the optimizer state.
struct ResponseState {
  std::vector<ParamVec> r_theta;
  std::vector<ParamVec> r_velocity;

  static ResponseState zeros(std::size_t n_groups, Eigen::Index d);
};

// Final responses of one run, attached to the parameters they describe.
struct ResponseSet {
  std::vector<dataio::RemovalGroup> groups;
  std::vector<ParamVec> responses;
  ParamVec theta_final;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  const ParamVec& response(const dataio::RemovalGroup& group) const;
};

struct UnrolledHooks {
  // Called before each update with the pre-step (theta_t, r_t) pair.
  std::function<void(int t, const ParamVec& theta, const ResponseState& rstate)> on_step;
};

// One exact derivative step through the optimizer update: the batch-loss
// curvature term, the direct gradient term for group members in the batch,
// the weight-decay term, the clipping Jacobian, and the momentum recursion.
void response_step(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                   const trainer::TrainConfig& config, const trainer::WeightVector& weights,
                   const std::vector<dataio::RemovalGroup>& groups,
                   const trainer::StepContext& ctx, ResponseState& rstate);

// Trains and propagates responses in lock-step over the identical batch
// schedule; memory use is independent of the number of iterations.
ResponseSet unrolled_run(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                         const trainer::TrainConfig& config, std::uint64_t seed,
                         const std::vector<dataio::RemovalGroup>& groups,
                         const UnrolledHooks& hooks = {});

// Direct expansion of the response as a sum over iterations of products of
// (I - (eta_l/B) sum_n delta_n^l Hessian_n) factors applied to the group's
// batch-gradient contributions. Vanilla SGD only; used as a verification
// oracle for the recursion.
ParamVec closed_form_response(const modelzoo::ModelSpec& spec, const dataio::DatasetTable& table,
                              const trainer::TrainConfig& config,
                              const std::vector<ParamVec>& trajectory,
                              const dataio::BatchSchedule& schedule,
                              const dataio::RemovalGroup& group);

// First-order removal prediction: theta_T plus the group's response.
ParamVec predict_removed_params(const ParamVec& theta_final, const ResponseSet& rset,
                                const dataio::RemovalGroup& group);

// First-order measurement prediction: m(theta_T) + grad m(theta_T)^T r.
double predict_measurement(const ParamVec& theta_final, const ResponseSet& rset,
                           const dataio::RemovalGroup& group,
                           const modelzoo::MeasurementSpec& mspec,
                           const modelzoo::ModelSpec& spec);

// Serialized form: a small JSON manifest next to a flat little-endian f64
// payload holding theta_final then each group's response.
void save_response_set(const std::string& json_path, const std::string& bin_path,
                       const ResponseSet& rset);
ResponseSet load_response_set(const std::string& json_path, const std::string& bin_path);

}  // namespace dattr::unrolled
