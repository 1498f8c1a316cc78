#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "splitnn/comm_ledger.hpp"
#include "splitnn/trainer.hpp"

namespace splitnn {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  std::string dataset = "digits";  // mnist | digits | synthetic-series
  std::vector<std::string> schemes = {"proposed"};
  std::vector<int64_t> c_values = {64};
  std::vector<std::optional<int>> q_values = {std::nullopt};  // nullopt = "none"
  std::vector<uint64_t> seeds = {1};

  // training
  double lr = 1e-3;
  int64_t batch = 32;
  int epochs = 3;
  std::string optimizer = "adam";
  double lambda = 1e-4;
  std::string mode = "distributed";         // distributed | centralized
  std::string train_quantizer = "off";      // off | ste
  int plateau_patience = 0;
  int64_t train_limit = 10000;

  // data
  uint64_t data_seed = 42;
  std::string mnist_dir;  // expects train-images-idx3-ubyte etc.
  int64_t digits_train = 10000;
  int64_t digits_test = 10000;
  int64_t series_length = 12000;

  // output
  std::string out_dir = "runs/out";
  bool export_trace = false;
  std::string save_model;
  std::string fdml_activation = "identity";

  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

struct ResultRow {
  std::string scheme;
  std::string dataset;
  int64_t C = 0;
  std::optional<int> q;
  uint64_t seed = 0;
  int64_t bits_inference = 0;
  int64_t raw_bits = 0;
  double savings = 0.0;
  double accuracy = 0.0;
  int epochs = 0;
};

std::vector<ResultRow> run_experiment(const ExperimentConfig&, std::ostream& log);

void write_results_tsv(std::ostream&, const std::vector<ResultRow>&);
std::vector<ResultRow> read_results_tsv(std::istream&);

// Aggregates rows over seeds into the rate-accuracy table, sorted by
// (scheme, C, q).
void emit_tradeoff_table(const std::vector<ResultRow>&, std::ostream&, bool aligned = false);

void write_manifest(const ExperimentConfig&, std::ostream&);

// Fast oracle/invariant suite behind `check`; prints one line per check.
bool run_self_checks(std::ostream&);

}  // namespace splitnn
