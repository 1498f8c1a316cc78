#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "splitnn/experiment.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"splitnn: communication-efficient split inference experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "train and evaluate every configured (scheme, C, q, seed) tuple");
  run->add_option("config", config_path, "experiment config file (key = value lines)")->required();

  std::string results_path;
  std::string format = "tsv";
  auto* report = app.add_subcommand("report", "render the rate-accuracy table from a results file");
  report->add_option("results", results_path, "results.tsv produced by run")->required();
  report->add_option("--format", format, "tsv or table")->check(CLI::IsMember({"tsv", "table"}));

  auto* check = app.add_subcommand("check", "run the oracle and invariant self-checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      splitnn::ExperimentConfig cfg = splitnn::parse_config_file(config_path);
      fs::create_directories(cfg.out_dir);
      auto rows = splitnn::run_experiment(cfg, std::cout);

      std::ofstream results(fs::path(cfg.out_dir) / "results.tsv");
      splitnn::write_results_tsv(results, rows);
      std::ofstream tradeoff(fs::path(cfg.out_dir) / "tradeoff.tsv");
      splitnn::emit_tradeoff_table(rows, tradeoff);
      std::ofstream manifest(fs::path(cfg.out_dir) / "manifest.txt");
      splitnn::write_manifest(cfg, manifest);

      std::cout << "\nwrote " << (fs::path(cfg.out_dir) / "results.tsv").string() << '\n';
      splitnn::emit_tradeoff_table(rows, std::cout, /*aligned=*/true);
      return 0;
    }
    if (report->parsed()) {
      std::ifstream f(results_path);
      if (!f) {
        std::cerr << "cannot open " << results_path << '\n';
        return 1;
      }
      auto rows = splitnn::read_results_tsv(f);
      splitnn::emit_tradeoff_table(rows, std::cout, format == "table");
      return 0;
    }
    if (check->parsed()) {
      const bool ok = splitnn::run_self_checks(std::cout);
      std::cout << (ok ? "all checks passed\n" : "CHECK FAILURES\n");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
