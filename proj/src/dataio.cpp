#include "dattr/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dattr/rng.hpp"

namespace dattr::dataio {

std::uint64_t DatasetTable::hash() const {
  std::uint64_t h = fnv1a("table");
  h = fnv1a_u64(static_cast<std::uint64_t>(n()), h);
  h = fnv1a_u64(static_cast<std::uint64_t>(input_dim()), h);
  auto mix_double = [&h](double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    h = fnv1a_u64(bits, h);
  };
  for (Eigen::Index i = 0; i < features.size(); ++i) mix_double(features.data()[i]);
  for (Eigen::Index i = 0; i < targets.size(); ++i) mix_double(targets[i]);
  for (int l : labels) h = fnv1a_u64(static_cast<std::uint64_t>(l), h);
  return h;
}

void DatasetTable::validate() const {
  require(n() >= 1, "DatasetTable: needs at least one row");
  if (!features.allFinite()) throw IngestError("DatasetTable: non-finite feature values");
  if (is_classification()) {
    require(static_cast<Eigen::Index>(labels.size()) == n(), "DatasetTable: label count mismatch");
  } else {
    require(targets.size() == n(), "DatasetTable: target count mismatch");
    if (!targets.allFinite()) throw IngestError("DatasetTable: non-finite target values");
  }
}

bool RemovalGroup::contains(int id) const {
  return std::binary_search(indices.begin(), indices.end(), id);
}

std::uint64_t RemovalGroup::hash() const {
  std::uint64_t h = fnv1a("group");
  for (int i : indices) h = fnv1a_u64(static_cast<std::uint64_t>(i), h);
  return h;
}

std::string to_string(BatchMode mode) {
  return mode == BatchMode::iid ? "iid" : "epoch-shuffle";
}

BatchMode batch_mode_from_string(const std::string& s) {
  if (s == "iid") return BatchMode::iid;
  if (s == "epoch-shuffle") return BatchMode::epoch_shuffle;
  throw ContractError("unknown batch mode: " + s);
}

std::vector<std::uint8_t> BatchSchedule::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(16 + selections.size() * 4);
  auto push_u32 = [&out](std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
  };
  push_u32(mode == BatchMode::iid ? 0u : 1u);
  push_u32(static_cast<std::uint32_t>(n));
  push_u32(static_cast<std::uint32_t>(batch_size));
  push_u32(static_cast<std::uint32_t>(iters));
  for (int id : selections) push_u32(static_cast<std::uint32_t>(id));
  return out;
}

namespace {

bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

DatasetTable load_concrete(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("load_concrete: cannot open " + path);

  constexpr int kFeatures = 8;
  std::vector<std::array<double, kFeatures + 1>> rows;
  std::string line;
  int line_no = 0;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    // Strip trailing CR and skip blank lines.
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    std::array<double, kFeatures + 1> row{};
    bool all_numeric = true;
    for (std::size_t c = 0; c < cells.size() && c < row.size(); ++c) {
      double parsed = 0.0;
      if (parse_double(cells[c], parsed)) {
        row[c] = parsed;
      } else {
        all_numeric = false;
      }
    }
    if (first_data_line && !all_numeric) {
      first_data_line = false;  // optional header line
      continue;
    }
    if (cells.size() != kFeatures + 1) {
      throw IngestError("load_concrete: row " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " columns, expected 9");
    }
    if (!all_numeric) {
      throw IngestError("load_concrete: row " + std::to_string(line_no) +
                        " has an unparsable cell");
    }
    first_data_line = false;
    rows.push_back(row);
  }
  if (rows.empty()) throw IngestError("load_concrete: no data rows in " + path);

  DatasetTable table;
  table.features.resize(static_cast<Eigen::Index>(rows.size()), kFeatures);
  table.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < kFeatures; ++c) table.features(static_cast<Eigen::Index>(r), c) = rows[r][c];
    table.targets[static_cast<Eigen::Index>(r)] = rows[r][kFeatures];
  }
  table.validate();
  return table;
}

namespace {

std::uint32_t read_be_u32(std::istream& in, const char* field) {
  std::uint8_t buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw IngestError(std::string("load_mnist: truncated file reading ") + field);
  }
  return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
         (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

DatasetTable load_mnist(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IngestError("load_mnist: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IngestError("load_mnist: cannot open " + labels_path);

  const std::uint32_t img_magic = read_be_u32(img, "images magic");
  if (img_magic != 0x00000803u) {
    throw IngestError("load_mnist: bad magic in images file (expected 0x00000803)");
  }
  const std::uint32_t n_images = read_be_u32(img, "image count");
  const std::uint32_t rows = read_be_u32(img, "row count");
  const std::uint32_t cols = read_be_u32(img, "column count");

  const std::uint32_t lab_magic = read_be_u32(lab, "labels magic");
  if (lab_magic != 0x00000801u) {
    throw IngestError("load_mnist: bad magic in labels file (expected 0x00000801)");
  }
  const std::uint32_t n_labels = read_be_u32(lab, "label count");
  if (n_images != n_labels) {
    throw IngestError("load_mnist: image count " + std::to_string(n_images) +
                      " does not match label count " + std::to_string(n_labels));
  }

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  DatasetTable table;
  table.features.resize(static_cast<Eigen::Index>(n_images), static_cast<Eigen::Index>(pixels));
  table.labels.resize(n_images);

  std::vector<std::uint8_t> buf(pixels);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels))) {
      throw IngestError("load_mnist: truncated file reading pixels of image " + std::to_string(i));
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      table.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          static_cast<double>(buf[p]) / 255.0;
    }
  }
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    char c;
    if (!lab.read(&c, 1)) {
      throw IngestError("load_mnist: truncated file reading label " + std::to_string(i));
    }
    const int label = static_cast<int>(static_cast<unsigned char>(c));
    if (label > 9) {
      throw IngestError("load_mnist: label byte " + std::to_string(label) + " at index " +
                        std::to_string(i) + " outside 0..9");
    }
    table.labels[i] = label;
  }
  table.validate();
  return table;
}

Eigen::VectorXd StandardizeStats::transform_query(const Eigen::VectorXd& raw) const {
  require(raw.size() == feature_mean.size(), "transform_query: dimension mismatch");
  return (raw - feature_mean).cwiseQuotient(feature_scale);
}

std::pair<DatasetTable, StandardizeStats> standardize(const DatasetTable& table) {
  require(table.n() >= 2, "standardize: needs at least two rows");
  DatasetTable out = table;
  StandardizeStats stats;
  const Eigen::Index n = table.n();
  const Eigen::Index d = table.input_dim();
  stats.feature_mean.resize(d);
  stats.feature_scale.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double mean = table.features.col(c).mean();
    const double var = (table.features.col(c).array() - mean).square().sum() / static_cast<double>(n);
    double scale = std::sqrt(var);
    if (scale == 0.0) {
      stats.warnings.push_back("feature column " + std::to_string(c) +
                               " has zero variance; centered only");
      scale = 1.0;
    }
    stats.feature_mean[c] = mean;
    stats.feature_scale[c] = scale;
    out.features.col(c) = (table.features.col(c).array() - mean) / scale;
  }
  if (!table.is_classification()) {
    stats.has_target = true;
    const double mean = table.targets.mean();
    const double var = (table.targets.array() - mean).square().sum() / static_cast<double>(n);
    double scale = std::sqrt(var);
    if (scale == 0.0) {
      stats.warnings.push_back("target has zero variance; centered only");
      scale = 1.0;
    }
    stats.target_mean = mean;
    stats.target_scale = scale;
    out.targets = (table.targets.array() - mean) / scale;
  }
  return {std::move(out), std::move(stats)};
}

DatasetTable destandardize(const DatasetTable& table, const StandardizeStats& stats) {
  DatasetTable out = table;
  for (Eigen::Index c = 0; c < table.input_dim(); ++c) {
    out.features.col(c) = table.features.col(c).array() * stats.feature_scale[c] + stats.feature_mean[c];
  }
  if (stats.has_target) {
    out.targets = table.targets.array() * stats.target_scale + stats.target_mean;
  }
  return out;
}

std::vector<RemovalGroup> make_removal_subsets(int n, int n_subsets, double fraction,
                                               std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, "make_removal_subsets: fraction must be in [0, 1)");
  require(n_subsets >= 1, "make_removal_subsets: n_subsets must be >= 1");
  require(n >= 1, "make_removal_subsets: n must be >= 1");
  const int size = static_cast<int>(std::llround(fraction * n));
  if (fraction > 0.0 && size == 0) {
    throw ContractError("make_removal_subsets: fraction " + std::to_string(fraction) +
                        " rounds to an empty group for n=" + std::to_string(n));
  }
  std::vector<RemovalGroup> groups(static_cast<std::size_t>(n_subsets));
  Rng rng(derive_seed(seed, "subsets"));
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (auto& group : groups) {
    std::iota(pool.begin(), pool.end(), 0);
    group.indices.resize(static_cast<std::size_t>(size));
    for (int j = 0; j < size; ++j) {
      const auto k = j + static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(n - j)));
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(k)]);
      group.indices[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j)];
    }
    std::sort(group.indices.begin(), group.indices.end());
  }
  return groups;
}

BatchSchedule batch_schedule(int n, int batch_size, int iters, BatchMode mode,
                             std::uint64_t seed) {
  require(batch_size >= 1 && batch_size <= n, "batch_schedule: requires 1 <= B <= N");
  require(iters >= 0, "batch_schedule: iteration count must be non-negative");
  BatchSchedule sched;
  sched.mode = mode;
  sched.n = n;
  sched.batch_size = batch_size;
  sched.iters = iters;
  sched.selections.resize(static_cast<std::size_t>(iters) * batch_size);

  Rng rng(derive_seed(seed, "batches"));
  if (mode == BatchMode::iid) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int t = 0; t < iters; ++t) {
      for (int j = 0; j < batch_size; ++j) {
        const auto k = j + static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(n - j)));
        std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(k)]);
        sched.selections[static_cast<std::size_t>(t) * batch_size + j] =
            pool[static_cast<std::size_t>(j)];
      }
    }
  } else {
    // Consecutive batches sliced from a stream of per-epoch permutations; a
    // batch crossing an epoch boundary is padded from the next shuffle, so
    // every id appears floor(T*B/N) or ceil(T*B/N) times.
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    int pos = 0;
    for (std::size_t s = 0; s < sched.selections.size(); ++s) {
      if (pos == n) {
        rng.shuffle(perm);
        pos = 0;
      }
      sched.selections[s] = perm[static_cast<std::size_t>(pos++)];
    }
  }
  return sched;
}

}  // namespace dattr::dataio
