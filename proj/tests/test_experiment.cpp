#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "splitnn/experiment.hpp"

using namespace splitnn;

namespace {

std::string rows_to_string(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  write_results_tsv(os, rows);
  return os.str();
}

}  // namespace

TEST_CASE("config parsing accepts the documented keys and rejects everything else") {
  const std::string good =
      "dataset = digits\n"
      "schemes = proposed, fdml\n"
      "c_values = 12, 64\n"
      "q_values = none, 4\n"
      "seeds = 1, 2\n"
      "epochs = 2\n"
      "batch = 16\n"
      "lr = 0.002\n"
      "optimizer = adam\n"
      "lambda = 1e-4\n"
      "mode = distributed\n"
      "train_quantizer = off\n"
      "train_limit = 500\n"
      "digits_train = 500\n"
      "digits_test = 200\n"
      "out_dir = /tmp/splitnn_exp\n"
      "# a comment line\n";
  ExperimentConfig cfg = parse_config_text(good);
  CHECK(cfg.schemes == std::vector<std::string>{"proposed", "fdml"});
  CHECK(cfg.c_values == std::vector<int64_t>{12, 64});
  REQUIRE(cfg.q_values.size() == 2);
  CHECK_FALSE(cfg.q_values[0].has_value());
  CHECK(cfg.q_values[1] == 4);
  CHECK(cfg.seeds == std::vector<uint64_t>{1, 2});
  CHECK(cfg.lr == 0.002);

  CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("dataset = imagenet\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("dataset = mnist\n"), ConfigError);  // mnist_dir missing
  CHECK_THROWS_AS(parse_config_text("epochs = banana\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("schemes = proposed\nq_values = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("lr\n"), ConfigError);
  // file existence is a run-time concern; the parse only needs the path
  CHECK_NOTHROW(parse_config_text("mnist_dir = /nonexistent\ndataset = mnist\n"));
}

TEST_CASE("a missing dataset directory is rejected with its path") {
  ExperimentConfig cfg;
  cfg.dataset = "mnist";
  cfg.mnist_dir = "/definitely/not/here";
  cfg.epochs = 1;
  std::ostringstream log;
  CHECK_THROWS_WITH_AS(run_experiment(cfg, log), doctest::Contains("/definitely/not/here"), ConfigError);
}

TEST_CASE("the tuple grid produces exactly one row per (scheme, C, q, seed)") {
  ExperimentConfig cfg;
  cfg.dataset = "digits";
  cfg.schemes = {"proposed"};
  cfg.c_values = {12, 64};
  cfg.q_values = {4, std::nullopt};
  cfg.seeds = {1, 2};
  cfg.epochs = 1;
  cfg.batch = 32;
  cfg.lr = 1e-3;
  cfg.train_limit = 160;
  cfg.digits_train = 160;
  cfg.digits_test = 80;
  std::ostringstream log;
  auto rows = run_experiment(cfg, log);
  CHECK(rows.size() == 8);  // 1 scheme x 2 C x 2 q x 2 seeds

  // rows are sorted by (scheme, C, q, seed) and bits follow the formula
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto key = [](const ResultRow& r) {
      return std::make_tuple(r.scheme, r.C, r.q.value_or(99), r.seed);
    };
    CHECK(key(rows[i - 1]) < key(rows[i]));
  }
  for (const auto& r : rows) {
    CHECK(r.raw_bits == 6272);
    const int64_t per_value = r.q ? *r.q : 32;
    CHECK(r.bits_inference == per_value * r.C);
    CHECK(r.savings >= 0.0);
    CHECK(r.savings < 1.0);
  }
}

TEST_CASE("rerunning the same config reproduces the results byte for byte") {
  ExperimentConfig cfg;
  cfg.dataset = "digits";
  cfg.schemes = {"proposed"};
  cfg.c_values = {12};
  cfg.q_values = {std::nullopt};
  cfg.seeds = {3};
  cfg.epochs = 1;
  cfg.train_limit = 120;
  cfg.digits_train = 120;
  cfg.digits_test = 60;
  std::ostringstream log1, log2;
  const std::string a = rows_to_string(run_experiment(cfg, log1));
  const std::string b = rows_to_string(run_experiment(cfg, log2));
  CHECK(a == b);
}

TEST_CASE("results files round-trip") {
  std::vector<ResultRow> rows;
  ResultRow r;
  r.scheme = "proposed";
  r.dataset = "digits";
  r.C = 64;
  r.q = 4;
  r.seed = 1;
  r.bits_inference = 256;
  r.raw_bits = 6272;
  r.savings = 1.0 - 256.0 / 6272.0;
  r.accuracy = 0.934;
  r.epochs = 3;
  rows.push_back(r);
  r.q = std::nullopt;
  r.bits_inference = 2048;
  r.savings = 1.0 - 2048.0 / 6272.0;
  r.seed = 2;
  rows.push_back(r);

  std::ostringstream os;
  write_results_tsv(os, rows);
  std::istringstream is(os.str());
  auto back = read_results_tsv(is);
  REQUIRE(back.size() == 2);
  CHECK(back[0].scheme == "proposed");
  CHECK(back[0].q == 4);
  CHECK(back[0].bits_inference == 256);
  CHECK_FALSE(back[1].q.has_value());
}

TEST_CASE("the tradeoff table aggregates seeds and carries the paper's C=64 q=4 point") {
  std::vector<ResultRow> rows;
  for (uint64_t seed : {1, 2, 3}) {
    ResultRow r;
    r.scheme = "proposed";
    r.dataset = "digits";
    r.C = 64;
    r.q = 4;
    r.seed = seed;
    r.bits_inference = 256;
    r.raw_bits = 6272;
    r.savings = 1.0 - 256.0 / 6272.0;
    r.accuracy = 0.93 + 0.01 * static_cast<double>(seed);
    r.epochs = 3;
    rows.push_back(r);
  }
  std::ostringstream os;
  emit_tradeoff_table(rows, os);
  const std::string table = os.str();
  CHECK(table.find("proposed\tdigits\t64\t4\t256\t6272\t0.9592\t0.9500") != std::string::npos);
  CHECK(table.find("\t3\n") != std::string::npos);  // three seeds aggregated

  std::ostringstream empty;
  emit_tradeoff_table({}, empty);
  CHECK(empty.str() ==
        "scheme\tdataset\tC\tq\tbits_per_inference\traw_bits\tsavings\tmean_accuracy\taccuracy_stddev\tepochs\t"
        "seeds\n");
}

TEST_CASE("manifest echoes the full configuration") {
  ExperimentConfig cfg;
  cfg.seeds = {5, 6};
  std::ostringstream os;
  write_manifest(cfg, os);
  const std::string m = os.str();
  CHECK(m.find("seeds = 5 6") != std::string::npos);
  CHECK(m.find("dataset = digits") != std::string::npos);
  CHECK(m.find("lr = 0.001") != std::string::npos);
}
