#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dattr/common.hpp"
#include "dattr/modelzoo.hpp"

namespace dattr::dataio {

// Ordered collection of training examples. Row index is the permanent
// identity used by removal groups.
struct DatasetTable {
  using RowMajorMatrix =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  RowMajorMatrix features;   // N x d_in
  Eigen::VectorXd targets;   // regression targets, size N (or 0)
  std::vector<int> labels;   // class labels, size N (or 0)

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index input_dim() const { return features.cols(); }
  bool is_classification() const { return !labels.empty(); }

  modelzoo::Example example(Eigen::Index i) const {
    modelzoo::Example ex;
    ex.x = features.data() + i * features.cols();
    ex.x_dim = features.cols();
    if (is_classification()) {
      ex.label = labels[static_cast<std::size_t>(i)];
    } else {
      ex.y = targets.data() + i;
      ex.y_dim = 1;
    }
    return ex;
  }

  Eigen::VectorXd row(Eigen::Index i) const { return features.row(i).transpose(); }

  std::uint64_t hash() const;
  void validate() const;
};

// Sorted set of dataset ids to remove; may be empty (the null group).
struct RemovalGroup {
  std::vector<int> indices;

  bool contains(int id) const;
  std::uint64_t hash() const;
};

enum class BatchMode { iid, epoch_shuffle };

std::string to_string(BatchMode mode);
BatchMode batch_mode_from_string(const std::string& s);

// Precomputed batch identities for a whole run, shared between the trainer
// and the unrolled-differentiation engine so both see the identical batching
// realization.
struct BatchSchedule {
  BatchMode mode = BatchMode::epoch_shuffle;
  int n = 0;
  int batch_size = 0;
  int iters = 0;
  std::vector<int> selections;  // iters * batch_size ids, iteration-major

  std::span<const int> batch(int t) const {
    return {selections.data() + static_cast<std::size_t>(t) * batch_size,
            static_cast<std::size_t>(batch_size)};
  }

  std::vector<std::uint8_t> serialize() const;
};

// UCI-style regression CSV: 8 feature columns plus one target column,
// optional single header line.
DatasetTable load_concrete(const std::string& path);

// IDX image/label pair, big-endian headers, pixel bytes scaled to [0, 1].
DatasetTable load_mnist(const std::string& images_path, const std::string& labels_path);

struct StandardizeStats {
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;  // population std, 1.0 for constant columns
  double target_mean = 0.0;
  double target_scale = 1.0;
  bool has_target = false;
  std::vector<std::string> warnings;

  Eigen::VectorXd transform_query(const Eigen::VectorXd& raw) const;
};

// Per-column zero-mean unit-std features (and regression target). Constant
// columns are centered with scale kept at 1 and a warning recorded.
std::pair<DatasetTable, StandardizeStats> standardize(const DatasetTable& table);

DatasetTable destandardize(const DatasetTable& table, const StandardizeStats& stats);

// Uniform removal subsets without replacement, size round(fraction * N).
std::vector<RemovalGroup> make_removal_subsets(int n, int n_subsets, double fraction,
                                               std::uint64_t seed);

BatchSchedule batch_schedule(int n, int batch_size, int iters, BatchMode mode,
                             std::uint64_t seed);

}  // namespace dattr::dataio
