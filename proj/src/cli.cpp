#include "dattr/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dattr/harness.hpp"
#include "dattr/report.hpp"

namespace dattr::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct CommonArgs {
  std::string manifest_path;
  std::string out_override;
  std::vector<std::string> sets;
  std::vector<std::string> formats;

  std::vector<std::string> effective_formats() const {
    return formats.empty() ? std::vector<std::string>{"json", "csv"} : formats;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args, bool manifest_required = true) {
  auto* opt = cmd->add_option("--manifest", args.manifest_path, "experiment manifest (JSON)");
  if (manifest_required) opt->required();
  cmd->add_option("--out", args.out_override, "output directory (overrides the manifest)");
  cmd->add_option("--set", args.sets, "manifest override, key=value (repeatable)")
      ->take_all();
  cmd->add_option("--format", args.formats, "output formats: csv, json, svg (repeatable)")
      ->take_all()
      ->check(CLI::IsMember({"csv", "json", "svg"}));
}

harness::ExperimentManifest load(const CommonArgs& args) {
  auto manifest = harness::load_manifest(args.manifest_path, args.sets);
  if (!args.out_override.empty()) manifest.out_dir = args.out_override;
  return manifest;
}

void write_echo(const harness::ResolvedExperiment& exp) {
  ordered_json echo = harness::manifest_echo(exp.manifest);
  echo["resolved"]["dataset"] = exp.dataset_provenance;
  echo["resolved"]["standardized"] = exp.standardized;
  echo["resolved"]["layer_dims"] = exp.spec.layer_dims;
  echo["resolved"]["param_count"] = exp.spec.param_count();
  echo["resolved"]["n_rows"] = exp.table.n();
  echo["resolved"]["n_queries"] = exp.queries.size();
  echo["resolved"]["warnings"] = exp.warnings;
  report::write_file((fs::path(exp.manifest.out_dir) / "manifest_echo.json").string(),
                     report::json_text(echo));
}

std::string samples_csv(const std::vector<std::vector<distmetrics::EmpiricalDistribution>>& dists) {
  std::string csv = "subset_id,query_id,sample_index,value\n";
  for (const auto& per_subset : dists) {
    for (const auto& dist : per_subset) {
      for (std::size_t i = 0; i < dist.samples.size(); ++i) {
        csv += std::to_string(dist.subset_id) + "," + std::to_string(dist.query_id) + "," +
               std::to_string(i) + "," + distmetrics::format_double(dist.samples[i]) + "\n";
      }
    }
  }
  return csv;
}

int cmd_train(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const std::uint64_t seed = harness::run_seed(manifest.base_seed, "base", ~std::uint64_t{0}, 0);
  const auto theta = trainer::train_run(exp.spec, exp.table, manifest.train,
                                        trainer::WeightVector::ones(exp.table.n()), seed);
  const fs::path dir(manifest.out_dir);
  trainer::save_checkpoint((dir / "base_seed0.ckpt").string(), theta, exp.spec.hash(),
                           static_cast<std::uint64_t>(manifest.train.iters), seed);
  ordered_json summary;
  summary["kind"] = "train";
  summary["seed"] = seed;
  summary["iters"] = manifest.train.iters;
  summary["measurements"] = ordered_json::array();
  for (const auto& q : exp.queries) {
    summary["measurements"].push_back(modelzoo::measurement(q, exp.spec, theta));
  }
  report::write_file((dir / "summary.json").string(), report::json_text(summary));
  std::printf("train: wrote %s (%d iterations)\n", (dir / "base_seed0.ckpt").c_str(),
              manifest.train.iters);
  return 0;
}

int cmd_retrain(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const auto subsets =
      dataio::make_removal_subsets(static_cast<int>(exp.table.n()), manifest.subsets.n,
                                   manifest.subsets.fraction, manifest.subsets.seed);
  const auto result = harness::retrain_distribution(exp, subsets);
  const fs::path dir(manifest.out_dir);
  report::write_file((dir / "retrain_samples.csv").string(), samples_csv(result.dists));
  ordered_json summary;
  summary["kind"] = "retrain";
  summary["n_subsets"] = subsets.size();
  summary["n_retrain_seeds"] = manifest.n_retrain_seeds;
  summary["divergent"] = result.divergent;
  summary["total"] = result.total;
  report::write_file((dir / "summary.json").string(), report::json_text(summary));
  std::printf("retrain: %zu subsets x %d seeds, %d divergent; wrote %s\n", subsets.size(),
              manifest.n_retrain_seeds, result.divergent,
              (dir / "retrain_samples.csv").c_str());
  return 0;
}

int cmd_attribute(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const auto subsets =
      dataio::make_removal_subsets(static_cast<int>(exp.table.n()), manifest.subsets.n,
                                   manifest.subsets.fraction, manifest.subsets.seed);
  const auto base = harness::train_base_models(exp);
  const fs::path dir(manifest.out_dir);
  ordered_json summary;
  summary["kind"] = "attribute";
  summary["n_base"] = base.models.size();
  summary["divergent_base"] = base.divergent;

  for (const auto& method : manifest.methods) {
    const auto pred = harness::predict_distribution(exp, base.models, method, subsets);
    report::write_file((dir / ("predicted_samples_" + method + ".csv")).string(),
                       samples_csv(pred.dists));
    if (pred.mean_alpha) summary["alpha"][method] = *pred.mean_alpha;

    // Persist the first base model's responses in the exchange format.
    if (method == "unrolled") {
      const auto rset = unrolled::unrolled_run(exp.spec, exp.table, manifest.train,
                                               base.models.front().seed, subsets);
      unrolled::save_response_set((dir / "responses_unrolled_seed0.json").string(),
                                  (dir / "responses_unrolled_seed0.bin").string(), rset);
    } else {
      const influence::InfluenceEngine engine(
          exp.spec, exp.table, trainer::WeightVector::ones(exp.table.n()),
          base.models.front().theta,
          manifest.hessian_mode(method == "if-blockdiag"
                                    ? influence::HessianMode::Kind::block_diagonal
                                    : influence::HessianMode::Kind::exact));
      influence::InfluenceSet iset;
      iset.groups = subsets;
      iset.mode = engine.mode();
      iset.seed = base.models.front().seed;
      for (const auto& subset : subsets) iset.responses.push_back(engine.response(subset).r);
      influence::save_influence_set((dir / ("responses_" + method + "_seed0.json")).string(),
                                    (dir / ("responses_" + method + "_seed0.bin")).string(),
                                    iset);
    }
  }
  report::write_file((dir / "summary.json").string(), report::json_text(summary));
  std::printf("attribute: %zu methods over %zu subsets at %zu base models; outputs in %s\n",
              manifest.methods.size(), subsets.size(), base.models.size(),
              manifest.out_dir.c_str());
  return 0;
}

int cmd_lds(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const auto result = harness::run_lds_experiment(exp);
  const fs::path dir(manifest.out_dir);
  report::write_file((dir / "scores.csv").string(), result.scores.to_csv());
  report::emit_report(result.to_json(exp), args.effective_formats(), manifest.out_dir);
  double shown = 0.0;
  for (const auto& e : result.summary) {
    if (e.method == manifest.methods.front() && e.delta == "mean") shown = e.lds;
  }
  std::printf("lds: %zu entries; %s mean-influence LDS %.3f; outputs in %s\n",
              result.summary.size(), manifest.methods.front().c_str(), shown,
              manifest.out_dir.c_str());
  return 0;
}

int cmd_loo(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const auto result = harness::run_loo_experiment(exp);
  const fs::path dir(manifest.out_dir);

  std::string samples = "example_id,kind,sample_index,value\n";
  for (std::size_t k = 0; k < result.example_ids.size(); ++k) {
    for (std::size_t j = 0; j < result.retrain_samples[k].size(); ++j) {
      samples += std::to_string(result.example_ids[k]) + ",retrained," + std::to_string(j) +
                 "," + distmetrics::format_double(result.retrain_samples[k][j]) + "\n";
    }
    for (std::size_t j = 0; j < result.predicted_samples[k].size(); ++j) {
      samples += std::to_string(result.example_ids[k]) + ",predicted," + std::to_string(j) +
                 "," + distmetrics::format_double(result.predicted_samples[k][j]) + "\n";
    }
  }
  report::write_file((dir / "loo_samples.csv").string(), samples);
  report::emit_report(result.to_json(exp), args.effective_formats(), manifest.out_dir);
  std::printf("loo: correlation at %d seeds = %.3f; outputs in %s\n", result.seed_grid.back(),
              result.correlation.back(), manifest.out_dir.c_str());
  return 0;
}

int cmd_theory2(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto exp = harness::resolve_experiment(manifest);
  write_echo(exp);
  const auto result = harness::run_theorem2_experiment(exp);
  report::emit_report(result.to_json(exp), args.effective_formats(), manifest.out_dir);
  const auto& last = result.correlation.back();
  std::printf("theory2: final correlation %s, nullspace fraction %.4f; outputs in %s\n",
              last ? distmetrics::format_double(*last).c_str() : "undefined",
              result.nullspace_fraction.back(), manifest.out_dir.c_str());
  return 0;
}

int cmd_boltzmann(const CommonArgs& args) {
  const auto manifest = load(args);
  const auto result = harness::run_boltzmann_experiment(manifest.boltzmann);
  report::emit_report(result.to_json(manifest.boltzmann), args.effective_formats(),
                      manifest.out_dir);
  std::printf("boltzmann(%s): w2 transported %.5f vs identity %.5f; outputs in %s\n",
              manifest.boltzmann.scenario.c_str(), result.w2_transported, result.w2_identity,
              manifest.out_dir.c_str());
  return 0;
}

int cmd_ranks(const CommonArgs& args, const std::string& scores_path) {
  const auto manifest = load(args);
  const std::string path = scores_path.empty()
                               ? (fs::path(manifest.out_dir) / "scores.csv").string()
                               : scores_path;
  const auto table = distmetrics::ScoreTable::from_csv(report::read_file(path));
  const auto result = harness::run_rank_comparison(table, manifest.deltas);
  report::emit_report(result.to_json(), args.effective_formats(), manifest.out_dir);
  std::printf("ranks: %zu delta pairs over %d subsets; outputs in %s\n", result.pairs.size(),
              result.n_subsets, manifest.out_dir.c_str());
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& summary_path) {
  const auto manifest = load(args);
  const std::string path = summary_path.empty()
                               ? (fs::path(manifest.out_dir) / "summary.json").string()
                               : summary_path;
  const auto summary = nlohmann::ordered_json::parse(report::read_file(path));
  report::emit_report(summary, args.effective_formats(), manifest.out_dir);
  std::printf("report: re-rendered %s into %s\n", path.c_str(), manifest.out_dir.c_str());
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"distributional training data attribution experiments"};
  app.require_subcommand(1);

  CommonArgs train_args, retrain_args, attribute_args, lds_args, loo_args, theory2_args,
      boltzmann_args, ranks_args, report_args;
  std::string scores_path, summary_path;

  add_common(app.add_subcommand("train", "train one base model and write a checkpoint"),
             train_args);
  add_common(app.add_subcommand("retrain", "retraining ensembles for the manifest subsets"),
             retrain_args);
  add_common(app.add_subcommand("attribute",
                                "removal responses and predicted samples per method"),
             attribute_args);
  add_common(app.add_subcommand("lds", "distributional LDS experiment"), lds_args);
  add_common(app.add_subcommand("loo", "leave-one-out signal experiment"), loo_args);
  add_common(app.add_subcommand("theory2",
                                "late-time agreement between unrolled responses and "
                                "influence functions"),
             theory2_args);
  add_common(app.add_subcommand("boltzmann", "Boltzmann transport check"), boltzmann_args);
  auto* ranks_cmd =
      app.add_subcommand("ranks", "ranking agreement between difference functions");
  add_common(ranks_cmd, ranks_args);
  ranks_cmd->add_option("--scores", scores_path, "score table csv (default <out>/scores.csv)");
  auto* report_cmd = app.add_subcommand("report", "re-render an experiment summary");
  add_common(report_cmd, report_args);
  report_cmd->add_option("--summary", summary_path,
                         "summary json (default <out>/summary.json)");

  std::vector<const char*> argv;
  argv.push_back("dattr");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Help/version exit with 0; any real usage problem maps to 1.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("retrain")) return cmd_retrain(retrain_args);
    if (app.got_subcommand("attribute")) return cmd_attribute(attribute_args);
    if (app.got_subcommand("lds")) return cmd_lds(lds_args);
    if (app.got_subcommand("loo")) return cmd_loo(loo_args);
    if (app.got_subcommand("theory2")) return cmd_theory2(theory2_args);
    if (app.got_subcommand("boltzmann")) return cmd_boltzmann(boltzmann_args);
    if (app.got_subcommand("ranks")) return cmd_ranks(ranks_args, scores_path);
    if (app.got_subcommand("report")) return cmd_report(report_args, summary_path);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace dattr::cli
