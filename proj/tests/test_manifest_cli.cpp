#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dattr/cli.hpp"
#include "dattr/harness.hpp"
#include "dattr/report.hpp"
#include "support/fixtures.hpp"

using namespace dattr;
using namespace dattr::harness;

namespace {

std::string write_quadratic_manifest(const fixtures::TempDir& dir, const std::string& out_dir) {
  nlohmann::ordered_json doc = {
      {"setting", "quadratic-fixture"},
      {"base_seed", 21},
      {"out_dir", out_dir},
      {"n_base_seeds", 6},
      {"n_retrain_seeds", 6},
      {"subsets", {{"n", 5}, {"fraction", 0.25}, {"seed", 2}}},
      {"methods", {"unrolled", "if-exact"}},
      {"shuffle_trials", 20},
  };
  const std::string path = dir.file("manifest.json");
  fixtures::write_file(path, doc.dump(2));
  return path;
}

}  // namespace

TEST_SUITE("manifest") {

TEST_CASE("defaults come from the setting and overrides apply") {
  nlohmann::json doc = {{"setting", "concrete-tiny-mlp"}};
  const auto m = parse_manifest(doc);
  CHECK(m.train.base_lr == doctest::Approx(0.03));
  CHECK(m.train.momentum == doctest::Approx(0.9));
  CHECK(m.train.iters == 580);
  CHECK(m.train.batch_size == 32);
  CHECK(m.train.weight_decay == doctest::Approx(1e-5));
  CHECK(m.hessian_rel_tol == doctest::Approx(1e-4));

  const auto overridden = parse_manifest(doc, {"train.base_lr=0.01", "n_base_seeds=3"});
  CHECK(overridden.train.base_lr == doctest::Approx(0.01));
  CHECK(overridden.n_base_seeds == 3);

  // Damping defaults to the training weight decay.
  const auto mode = overridden.hessian_mode(influence::HessianMode::Kind::exact);
  CHECK(mode.damping == doctest::Approx(1e-5));
}

TEST_CASE("unknown fields are rejected by name") {
  nlohmann::json doc = {{"setting", "quadratic-fixture"}, {"spurious", 1}};
  try {
    parse_manifest(doc);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("spurious") != std::string::npos);
  }
  nlohmann::json nested = {{"setting", "quadratic-fixture"}, {"train", {{"lr", 0.1}}}};
  CHECK_THROWS_AS(parse_manifest(nested), ContractError);
  nlohmann::json bad_setting = {{"setting", "unheard-of"}};
  CHECK_THROWS_AS(parse_manifest(bad_setting), ContractError);
  nlohmann::json bad_method = {{"setting", "quadratic-fixture"}, {"methods", {"trak"}}};
  CHECK_THROWS_AS(parse_manifest(bad_method), ContractError);
}

TEST_CASE("queries need exactly one source") {
  nlohmann::json both = {{"setting", "quadratic-fixture"},
                         {"queries", {{{"row", 1}, {"features", {0.0}}}}}};
  CHECK_THROWS_AS(parse_manifest(both), ContractError);
  nlohmann::json neither = {{"setting", "quadratic-fixture"}, {"queries", {{{"kind", "loss"}}}}};
  CHECK_THROWS_AS(parse_manifest(neither), ContractError);
}

TEST_CASE("fixture settings resolve to the expected shapes") {
  const auto quad = resolve_experiment(parse_manifest({{"setting", "quadratic-fixture"}}));
  CHECK(quad.spec.param_count() == 2);  // 1-input GLM
  CHECK(quad.table.n() == 8);
  CHECK(quad.queries.size() == 3);

  const auto glm = resolve_experiment(parse_manifest({{"setting", "glm-fixture"}}));
  CHECK(glm.spec.param_count() == 7);
  CHECK(glm.table.n() == 40);

  const auto tiny = resolve_experiment(parse_manifest({{"setting", "concrete-tiny-mlp"}}));
  CHECK(tiny.spec.layer_dims == std::vector<int>{8, 64, 64, 1});
  CHECK(tiny.table.n() == 1030);
  CHECK(tiny.standardized);
  // Standardized columns have zero mean.
  for (int c = 0; c < 8; ++c) {
    CHECK(std::abs(tiny.table.features.col(c).mean()) < 1e-10);
  }

  const auto smaller = resolve_experiment(
      parse_manifest({{"setting", "concrete-tiny-mlp"}, {"model", {{"hidden_dims", {16, 16}}}}}));
  CHECK(smaller.spec.layer_dims == std::vector<int>{8, 16, 16, 1});
}

TEST_CASE("manifest echo is canonical") {
  const auto m = parse_manifest({{"setting", "quadratic-fixture"}});
  const auto echo = manifest_echo(m);
  CHECK(echo.at("setting") == "quadratic-fixture");
  CHECK(echo.at("train").at("iters") == 300);
  CHECK(manifest_echo(m).dump() == echo.dump());
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("lds command writes deterministic outputs") {
  fixtures::TempDir dir("cli_lds");
  const std::string out = dir.file("out");
  const std::string manifest = write_quadratic_manifest(dir, out);

  CHECK(cli::run({"lds", "--manifest", manifest}) == 0);
  REQUIRE(std::filesystem::exists(out + "/scores.csv"));
  REQUIRE(std::filesystem::exists(out + "/summary.json"));
  REQUIRE(std::filesystem::exists(out + "/lds_summary.csv"));
  REQUIRE(std::filesystem::exists(out + "/manifest_echo.json"));
  const std::string scores1 = report::read_file(out + "/scores.csv");
  const std::string summary1 = report::read_file(out + "/summary.json");

  CHECK(cli::run({"lds", "--manifest", manifest}) == 0);
  CHECK(report::read_file(out + "/scores.csv") == scores1);
  CHECK(report::read_file(out + "/summary.json") == summary1);

  // ranks consumes the lds score table.
  CHECK(cli::run({"ranks", "--manifest", manifest}) == 0);
  REQUIRE(std::filesystem::exists(out + "/ranks.csv"));

  // report re-renders the summary, including svg.
  CHECK(cli::run({"report", "--manifest", manifest, "--format", "svg"}) == 0);
  REQUIRE(std::filesystem::exists(out + "/lds.svg"));
}

TEST_CASE("usage errors exit with 1") {
  CHECK(cli::run({"lds", "--manifest", "missing.json", "--bogus"}) == 1);
  CHECK(cli::run({"frobnicate"}) == 1);
  CHECK(cli::run({}) == 1);

  fixtures::TempDir dir("cli_usage");
  const std::string path = dir.file("bad.json");
  fixtures::write_file(path, R"({"setting": "quadratic-fixture", "whatever": 3})");
  CHECK(cli::run({"lds", "--manifest", path}) == 1);

  fixtures::write_file(path, "not json");
  CHECK(cli::run({"lds", "--manifest", path}) == 2);
}

TEST_CASE("train and boltzmann commands run end to end") {
  fixtures::TempDir dir("cli_train");
  const std::string out = dir.file("out");
  nlohmann::ordered_json doc = {
      {"setting", "quadratic-fixture"},
      {"out_dir", out},
      {"boltzmann",
       {{"scenario", "gaussian"}, {"n_samples", 800}, {"n_chains", 4}, {"burn_in", 200},
        {"step_size", 0.09}}},
  };
  const std::string manifest = dir.file("m.json");
  fixtures::write_file(manifest, doc.dump(2));

  CHECK(cli::run({"train", "--manifest", manifest}) == 0);
  REQUIRE(std::filesystem::exists(out + "/base_seed0.ckpt"));
  const auto ckpt = trainer::load_checkpoint(out + "/base_seed0.ckpt");
  CHECK(ckpt.iteration == 300);

  CHECK(cli::run({"boltzmann", "--manifest", manifest, "--format", "json", "--format",
                  "csv"}) == 0);
  REQUIRE(std::filesystem::exists(out + "/boltzmann.csv"));
}

TEST_CASE("set overrides reach the experiment") {
  fixtures::TempDir dir("cli_set");
  const std::string out = dir.file("out");
  const std::string manifest = write_quadratic_manifest(dir, out);
  CHECK(cli::run({"train", "--manifest", manifest, "--set", "train.iters=7"}) == 0);
  const auto ckpt = trainer::load_checkpoint(out + "/base_seed0.ckpt");
  CHECK(ckpt.iteration == 7);
}

TEST_CASE("empty chart input renders a no-data annotation") {
  const auto svg = report::svg_line_chart("t", "x", "y", {});
  CHECK(svg.find("no data") != std::string::npos);
  const auto svg2 = report::svg_scatter("t", "x", "y", {});
  CHECK(svg2.find("no data") != std::string::npos);
}

}  // TEST_SUITE
