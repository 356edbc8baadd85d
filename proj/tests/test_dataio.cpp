#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "dattr/dataio.hpp"
#include "support/fixtures.hpp"

using namespace dattr;
using namespace dattr::dataio;

namespace {

void write_idx_images(const std::string& path, std::uint32_t magic, std::uint32_t count,
                      std::uint32_t rows, std::uint32_t cols,
                      const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  auto be = [&out](std::uint32_t x) {
    for (int i = 3; i >= 0; --i) out.put(static_cast<char>((x >> (8 * i)) & 0xff));
  };
  be(magic);
  be(count);
  be(rows);
  be(cols);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, std::uint32_t magic, std::uint32_t count,
                      const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  auto be = [&out](std::uint32_t x) {
    for (int i = 3; i >= 0; --i) out.put(static_cast<char>((x >> (8 * i)) & 0xff));
  };
  be(magic);
  be(count);
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("concrete loader parses rows with an optional header") {
  fixtures::TempDir dir("concrete");
  const std::string path = dir.file("c.csv");
  fixtures::write_file(path,
                       "cement,slag,ash,water,plast,coarse,fine,age,strength\n"
                       "540,0,0,162,2.5,1040,676,28,79.99\n"
                       "332.5,142.5,0,228,0,932,594,270,40.27\n");
  const auto table = load_concrete(path);
  CHECK(table.n() == 2);
  CHECK(table.input_dim() == 8);
  CHECK(table.targets[0] == doctest::Approx(79.99));
  CHECK(table.features(1, 1) == doctest::Approx(142.5));
}

TEST_CASE("concrete loader names the offending row") {
  fixtures::TempDir dir("concrete_bad");
  const std::string path = dir.file("c.csv");
  fixtures::write_file(path,
                       "1,2,3,4,5,6,7,8,9\n"
                       "1,2,3,4,5,6,7\n");
  try {
    load_concrete(path);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  fixtures::write_file(path, "1,2,3,4,5,6,7,8,bad\n1,2,3,4,5,6,7,8,9\n");
  // First line with a non-numeric cell is treated as the header.
  CHECK(load_concrete(path).n() == 1);

  fixtures::write_file(path, "1,2,3,4,5,6,7,8,9\n1,2,3,4,5,6,7,8,x\n");
  CHECK_THROWS_AS(load_concrete(path), IngestError);
}

TEST_CASE("mnist loader round-trips a synthetic idx pair") {
  fixtures::TempDir dir("mnist");
  const std::string images = dir.file("img.idx");
  const std::string labels = dir.file("lab.idx");
  std::vector<std::uint8_t> pixels = {0, 128, 255, 64, 32, 16, 8, 4};  // 2 images of 2x2
  write_idx_images(images, 0x00000803u, 2, 2, 2, pixels);
  write_idx_labels(labels, 0x00000801u, 2, {3, 9});
  const auto table = load_mnist(images, labels);
  CHECK(table.n() == 2);
  CHECK(table.input_dim() == 4);
  CHECK(table.labels[0] == 3);
  CHECK(table.labels[1] == 9);
  CHECK(table.features(0, 2) == doctest::Approx(1.0));
  CHECK(table.features(0, 0) == doctest::Approx(0.0));
  CHECK(table.features(1, 0) == doctest::Approx(32.0 / 255.0));
}

TEST_CASE("mnist loader rejects bad magic, count mismatch, truncation and bad labels") {
  fixtures::TempDir dir("mnist_bad");
  const std::string images = dir.file("img.idx");
  const std::string labels = dir.file("lab.idx");
  std::vector<std::uint8_t> pixels(8, 0);

  write_idx_images(images, 0x00000801u, 2, 2, 2, pixels);
  write_idx_labels(labels, 0x00000801u, 2, {1, 2});
  try {
    load_mnist(images, labels);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
  }

  write_idx_images(images, 0x00000803u, 2, 2, 2, pixels);
  write_idx_labels(labels, 0x00000801u, 3, {1, 2, 3});
  CHECK_THROWS_AS(load_mnist(images, labels), IngestError);

  write_idx_images(images, 0x00000803u, 3, 2, 2, pixels);  // promises 3, carries 2
  write_idx_labels(labels, 0x00000801u, 3, {1, 2, 3});
  CHECK_THROWS_AS(load_mnist(images, labels), IngestError);

  write_idx_images(images, 0x00000803u, 2, 2, 2, pixels);
  write_idx_labels(labels, 0x00000801u, 2, {1, 10});
  CHECK_THROWS_AS(load_mnist(images, labels), IngestError);
}

TEST_CASE("standardize centers and scales, and transforms queries identically") {
  DatasetTable table;
  table.features.resize(2, 2);
  table.features << 0.0, 5.0, 2.0, 5.0;  // column 1 is constant
  table.targets.resize(2);
  table.targets << 10.0, 20.0;
  const auto [std_table, stats] = standardize(table);
  CHECK(std_table.features(0, 0) == doctest::Approx(-1.0));
  CHECK(std_table.features(1, 0) == doctest::Approx(1.0));
  CHECK(std_table.features(0, 1) == doctest::Approx(0.0));
  CHECK(stats.warnings.size() == 1);
  CHECK(std_table.targets[0] == doctest::Approx(-1.0));

  Eigen::VectorXd q(2);
  q << 0.0, 5.0;
  const Eigen::VectorXd tq = stats.transform_query(q);
  CHECK(tq[0] == doctest::Approx(-1.0));
  CHECK(tq[1] == doctest::Approx(0.0));

  // Idempotence and round-trip.
  const auto [twice, stats2] = standardize(std_table);
  CHECK((twice.features - std_table.features).norm() < 1e-12);
  const auto back = destandardize(std_table, stats);
  CHECK((back.features - table.features).norm() < 1e-10);
  CHECK((back.targets - table.targets).norm() < 1e-10);
}

TEST_CASE("removal subsets are sized, in range, and deterministic") {
  const auto groups = make_removal_subsets(1030, 20, 0.1, 99);
  CHECK(groups.size() == 20);
  for (const auto& g : groups) {
    CHECK(g.indices.size() == 103);
    std::set<int> unique(g.indices.begin(), g.indices.end());
    CHECK(unique.size() == g.indices.size());
    CHECK(*g.indices.begin() >= 0);
    CHECK(g.indices.back() < 1030);
    CHECK(std::is_sorted(g.indices.begin(), g.indices.end()));
  }
  const auto again = make_removal_subsets(1030, 20, 0.1, 99);
  for (std::size_t i = 0; i < groups.size(); ++i) CHECK(groups[i].indices == again[i].indices);

  const auto null_groups = make_removal_subsets(50, 3, 0.0, 1);
  for (const auto& g : null_groups) CHECK(g.indices.empty());

  CHECK_THROWS_AS(make_removal_subsets(100, 2, 0.001, 1), ContractError);
}

TEST_CASE("batch schedule shapes and determinism") {
  const auto full = batch_schedule(10, 10, 3, BatchMode::iid, 7);
  for (int t = 0; t < 3; ++t) {
    std::set<int> ids(full.batch(t).begin(), full.batch(t).end());
    CHECK(ids.size() == 10);
  }
  const auto a = batch_schedule(20, 6, 10, BatchMode::epoch_shuffle, 7);
  const auto b = batch_schedule(20, 6, 10, BatchMode::epoch_shuffle, 7);
  CHECK(a.serialize() == b.serialize());
  const auto c = batch_schedule(20, 6, 10, BatchMode::epoch_shuffle, 8);
  CHECK(a.serialize() != c.serialize());
  for (int t = 0; t < 10; ++t) CHECK(a.batch(t).size() == 6);
}

TEST_CASE("iid schedules hit each id at roughly rate B/N") {
  const int n = 20;
  const int b = 5;
  const int iters = 10000;
  const auto sched = batch_schedule(n, b, iters, BatchMode::iid, 3);
  std::vector<int> counts(n, 0);
  for (int t = 0; t < iters; ++t) {
    for (int id : sched.batch(t)) counts[static_cast<std::size_t>(id)]++;
  }
  const double p = static_cast<double>(b) / n;
  const double sigma = std::sqrt(p * (1 - p) * iters);
  for (int id = 0; id < n; ++id) {
    CHECK(std::abs(counts[static_cast<std::size_t>(id)] - p * iters) < 3.0 * sigma + 1.0);
  }
}

TEST_CASE("epoch-shuffle balances id appearances") {
  for (const auto& [n, b, iters] : {std::tuple{10, 4, 15}, {10, 4, 7}, {7, 3, 11}}) {
    const auto sched = batch_schedule(n, b, iters, BatchMode::epoch_shuffle, 11);
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (int t = 0; t < iters; ++t) {
      for (int id : sched.batch(t)) counts[static_cast<std::size_t>(id)]++;
    }
    const double expected = static_cast<double>(iters) * b / n;
    for (int id = 0; id < n; ++id) {
      CHECK(counts[static_cast<std::size_t>(id)] >= static_cast<int>(std::floor(expected)));
      CHECK(counts[static_cast<std::size_t>(id)] <= static_cast<int>(std::ceil(expected)));
    }
  }
}

}  // TEST_SUITE
