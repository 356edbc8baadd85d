#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dattr/dataio.hpp"
#include "dattr/modelzoo.hpp"
#include "dattr/rng.hpp"
#include "dattr/trainer.hpp"

namespace fixtures {

// Small random regression table with standardized-looking features.
inline dattr::dataio::DatasetTable random_regression_table(int n, int d, std::uint64_t seed) {
  dattr::Rng rng(dattr::derive_seed(seed, "fixture-table"));
  dattr::dataio::DatasetTable table;
  table.features.resize(n, d);
  table.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) table.features(i, c) = rng.normal();
    table.targets[i] = rng.normal();
  }
  return table;
}

inline dattr::dataio::DatasetTable random_classification_table(int n, int d, int classes,
                                                               std::uint64_t seed) {
  dattr::Rng rng(dattr::derive_seed(seed, "fixture-table-cls"));
  dattr::dataio::DatasetTable table;
  table.features.resize(n, d);
  table.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) table.features(i, c) = rng.normal();
    table.labels[static_cast<std::size_t>(i)] =
        static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(classes)));
  }
  return table;
}

inline dattr::modelzoo::ModelSpec tiny_mlp(int in = 3, int hidden = 4, int out = 1,
                                           dattr::modelzoo::LossKind loss =
                                               dattr::modelzoo::LossKind::half_mse) {
  return dattr::modelzoo::mlp_spec({in, hidden, out}, loss);
}

// Two-point closed-form fixture: with glm_spec(1) and x = 0 for both rows,
// the losses reduce to l1 = b^2/2 and l2 = (b-2)^2/2 on the bias alone (the
// weight coordinate never receives gradient and the pseudo-inverse drops it).
inline dattr::dataio::DatasetTable two_point_fixture() {
  dattr::dataio::DatasetTable table;
  table.features.resize(2, 1);
  table.features.setZero();
  table.targets.resize(2);
  table.targets << 0.0, 2.0;
  return table;
}

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("dattr_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }

  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace fixtures
