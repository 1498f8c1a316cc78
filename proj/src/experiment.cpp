#include "splitnn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "splitnn/baselines.hpp"
#include "splitnn/datasets.hpp"

namespace splitnn {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& item : out) {
    const char* ws = " \t";
    item.erase(0, item.find_first_not_of(ws));
    auto last = item.find_last_not_of(ws);
    item.erase(last == std::string::npos ? 0 : last + 1);
  }
  out.erase(std::remove(out.begin(), out.end(), ""), out.end());
  return out;
}

const std::set<std::string> kKnownKeys = {
    "dataset",     "schemes",        "c_values",    "q_values",      "seeds",
    "lr",          "batch",          "epochs",      "optimizer",     "lambda",
    "mode",        "train_quantizer", "plateau_patience", "train_limit", "data_seed",
    "mnist_dir",   "digits_train",   "digits_test", "series_length", "out_dir",
    "export_trace", "save_model",    "fdml_activation"};

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset != "mnist" && dataset != "digits" && dataset != "synthetic-series")
    throw ConfigError("dataset must be mnist, digits or synthetic-series, got '" + dataset + "'");
  if (schemes.empty()) throw ConfigError("no schemes configured");
  for (const auto& s : schemes)
    if (s != "proposed" && s != "fdml" && s != "centralized")
      throw ConfigError("scheme must be proposed, fdml or centralized, got '" + s + "'");
  if (seeds.empty()) throw ConfigError("no seeds configured");
  if (c_values.empty()) throw ConfigError("no C values configured");
  if (q_values.empty()) throw ConfigError("no q values configured");
  for (const auto& q : q_values)
    if (q && (*q < 1 || *q > 30)) throw ConfigError("q must be in [1,30]");
  if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("optimizer must be adam or sgd");
  if (mode != "distributed" && mode != "centralized") throw ConfigError("mode must be distributed or centralized");
  if (train_quantizer != "off" && train_quantizer != "ste")
    throw ConfigError("train_quantizer must be off or ste");
  if (dataset == "mnist" && mnist_dir.empty()) throw ConfigError("dataset=mnist requires mnist_dir");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      auto last = s.find_last_not_of(ws);
      s.erase(last == std::string::npos ? 0 : last + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!kKnownKeys.count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      if (key == "dataset") cfg.dataset = value;
      else if (key == "schemes") cfg.schemes = split_list(value);
      else if (key == "c_values") {
        cfg.c_values.clear();
        for (const auto& v : split_list(value)) cfg.c_values.push_back(std::stoll(v));
      } else if (key == "q_values") {
        cfg.q_values.clear();
        for (const auto& v : split_list(value))
          cfg.q_values.push_back(v == "none" ? std::nullopt : std::optional<int>(std::stoi(v)));
      } else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& v : split_list(value)) cfg.seeds.push_back(std::stoull(v));
      } else if (key == "lr") cfg.lr = std::stod(value);
      else if (key == "batch") cfg.batch = std::stoll(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "optimizer") cfg.optimizer = value;
      else if (key == "lambda") cfg.lambda = std::stod(value);
      else if (key == "mode") cfg.mode = value;
      else if (key == "train_quantizer") cfg.train_quantizer = value;
      else if (key == "plateau_patience") cfg.plateau_patience = std::stoi(value);
      else if (key == "train_limit") cfg.train_limit = std::stoll(value);
      else if (key == "data_seed") cfg.data_seed = std::stoull(value);
      else if (key == "mnist_dir") cfg.mnist_dir = value;
      else if (key == "digits_train") cfg.digits_train = std::stoll(value);
      else if (key == "digits_test") cfg.digits_test = std::stoll(value);
      else if (key == "series_length") cfg.series_length = std::stoll(value);
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "export_trace") cfg.export_trace = value == "true" || value == "1";
      else if (key == "save_model") cfg.save_model = value;
      else if (key == "fdml_activation") cfg.fdml_activation = value;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad value for '" + key + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

struct LoadedData {
  SplitDataset split;        // quadrant / per-node channels
  SplitDataset centralized;  // full features in one place
  FeatureBillingSpec billing_split;
};

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData out;
  if (cfg.dataset == "synthetic-series") {
    SeriesConfig sc;
    sc.seed = cfg.data_seed;
    sc.length = cfg.series_length;
    SeriesData sd = gen_synthetic_series(sc);
    out.split = make_series_split(sd, false);
    out.centralized = make_series_split(sd, true);
    out.billing_split.per_node_dims = std::vector<int64_t>(4, sc.window);
    out.billing_split.bits_per_feature = 32;  // raw measurements travel as floats
    return out;
  }
  LabeledImages train, test;
  if (cfg.dataset == "mnist") {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.mnist_dir);
    const auto img = dir / "train-images-idx3-ubyte";
    const auto lab = dir / "train-labels-idx1-ubyte";
    const auto timg = dir / "t10k-images-idx3-ubyte";
    const auto tlab = dir / "t10k-labels-idx1-ubyte";
    for (const auto& p : {img, lab, timg, tlab})
      if (!fs::exists(p)) throw ConfigError("dataset file missing: " + p.string());
    train = load_mnist_idx(img.string(), lab.string());
    test = load_mnist_idx(timg.string(), tlab.string());
  } else {
    train = synth_digits(derive_seed(cfg.data_seed, 1), cfg.digits_train);
    test = synth_digits(derive_seed(cfg.data_seed, 2), cfg.digits_test);
  }
  out.split = make_image_split(train, test, cfg.train_limit);
  out.centralized = make_image_centralized(train, test, cfg.train_limit);
  out.billing_split.per_node_dims = std::vector<int64_t>(4, 14 * 14);
  out.billing_split.bits_per_feature = 8;  // raw pixels are bytes
  return out;
}

TrainConfig train_config(const ExperimentConfig& cfg, uint64_t seed) {
  TrainConfig tc;
  tc.lr = cfg.lr;
  tc.batch = cfg.batch;
  tc.epochs = cfg.epochs;
  tc.seed = seed;
  tc.train_quantizer = cfg.train_quantizer == "ste" ? QuantizerMode::Ste : QuantizerMode::Off;
  tc.optimizer = cfg.optimizer == "adam" ? Optimizer::Adam : Optimizer::Sgd;
  tc.lambda = cfg.lambda;
  tc.plateau_patience = cfg.plateau_patience;
  return tc;
}

SplitTopology scheme_topology(const ExperimentConfig& cfg, const std::string& scheme, int64_t C,
                              std::optional<int> q) {
  if (cfg.dataset == "synthetic-series") {
    if (scheme == "centralized") return series_centralized_topology();
    SplitTopology t = series_split_topology(q);
    if (scheme == "fdml") t = with_fdml_aggregator(t, activation_from_string(cfg.fdml_activation));
    return t;
  }
  if (scheme == "centralized") return image_centralized_topology();
  SplitTopology t = image_split_topology(C, q);
  if (scheme == "fdml") t = with_fdml_aggregator(t, activation_from_string(cfg.fdml_activation));
  return t;
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  LoadedData data = load_data(cfg);
  const int64_t raw_bits = raw_baseline_bits(data.billing_split);
  const bool series = cfg.dataset == "synthetic-series";
  const TrainMode mode = cfg.mode == "centralized" ? TrainMode::Centralized : TrainMode::Distributed;
  const bool ste = cfg.train_quantizer == "ste";

  std::vector<ResultRow> rows;
  bool trace_written = false, model_written = false;
  for (const auto& scheme : cfg.schemes) {
    const bool is_centralized = scheme == "centralized";
    const SplitDataset& ds = is_centralized ? data.centralized : data.split;
    // the series topology has a fixed 9-value code per node
    std::vector<int64_t> c_list = is_centralized ? std::vector<int64_t>{0}
                                 : series        ? std::vector<int64_t>{36}
                                                 : cfg.c_values;
    for (int64_t C : c_list) {
      for (uint64_t seed : cfg.seeds) {
        // one training per (scheme, C, seed) when the quantizer does not
        // participate in training; one per q otherwise
        std::map<std::optional<int>, TrainResult> trained;
        auto train_for = [&](std::optional<int> q) -> TrainResult& {
          const std::optional<int> key = ste ? q : std::nullopt;
          auto it = trained.find(key);
          if (it == trained.end()) {
            SplitTopology topo = scheme_topology(cfg, scheme, C, ste ? key : std::nullopt);
            log << "train " << scheme << " C=" << C << " q=" << (key ? std::to_string(*key) : "none")
                << " seed=" << seed << " ..." << std::flush;
            TrainResult tr = train(topo, ds, train_config(cfg, seed), is_centralized ? TrainMode::Centralized : mode);
            log << (tr.diverged ? " diverged" : " done");
            if (!tr.history.empty())
              log << " (eval acc " << tr.history.back().eval_accuracy << ")";
            log << '\n';
            it = trained.emplace(key, std::move(tr)).first;
          }
          return it->second;
        };

        for (const auto& q : is_centralized ? std::vector<std::optional<int>>{std::nullopt} : cfg.q_values) {
          TrainResult& tr = train_for(q);
          SplitTopology eval_topo = scheme_topology(cfg, scheme, C, is_centralized ? std::nullopt : q);
          ResultRow row;
          row.scheme = scheme;
          row.dataset = cfg.dataset;
          row.C = is_centralized ? 0 : eval_topo.total_code_dim();
          row.q = is_centralized ? std::nullopt : q;
          row.seed = seed;
          row.epochs = static_cast<int>(tr.history.size());
          row.raw_bits = raw_bits;
          if (is_centralized) {
            row.bits_inference = raw_bits;  // transmits the raw features
            row.savings = 0.0;
          } else {
            row.bits_inference = bits_per_inference(eval_topo).total;
            row.savings = 1.0 - static_cast<double>(row.bits_inference) / static_cast<double>(raw_bits);
          }
          row.accuracy = tr.diverged ? 0.0
                                     : evaluate_accuracy(eval_topo, tr.params, ds.eval_features, ds.eval_labels);
          rows.push_back(row);

          if (cfg.export_trace && !trace_written && !tr.trace.messages.empty()) {
            std::filesystem::create_directories(cfg.out_dir);
            std::ofstream tf(std::filesystem::path(cfg.out_dir) / "trace.tsv");
            tr.trace.write_tsv(tf);
            trace_written = true;
          }
          if (!cfg.save_model.empty() && !model_written && !tr.diverged) {
            SplitTopology train_topo = scheme_topology(cfg, scheme, C, ste ? q : std::nullopt);
            save_checkpoint(train_topo, tr.params, cfg.save_model);
            model_written = true;
          }
        }
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    const auto key = [](const ResultRow& r) {
      return std::make_tuple(r.scheme, r.C, r.q.value_or(99), r.seed);
    };
    return key(a) < key(b);
  });
  return rows;
}

namespace {

std::string q_str(const std::optional<int>& q) { return q ? std::to_string(*q) : "none"; }

std::string fmt(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

void write_results_tsv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "scheme\tdataset\tC\tq\tseed\tbits_per_inference\traw_bits\tsavings\taccuracy\tepochs\n";
  for (const auto& r : rows)
    os << r.scheme << '\t' << r.dataset << '\t' << r.C << '\t' << q_str(r.q) << '\t' << r.seed << '\t'
       << r.bits_inference << '\t' << r.raw_bits << '\t' << fmt(r.savings) << '\t' << fmt(r.accuracy) << '\t'
       << r.epochs << '\n';
}

std::vector<ResultRow> read_results_tsv(std::istream& is) {
  std::vector<ResultRow> rows;
  std::string line;
  if (!std::getline(is, line)) return rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ResultRow r;
    std::string q;
    ls >> r.scheme >> r.dataset >> r.C >> q >> r.seed >> r.bits_inference >> r.raw_bits >> r.savings >>
        r.accuracy >> r.epochs;
    if (!ls) throw std::runtime_error("bad results row: " + line);
    if (q != "none") r.q = std::stoi(q);
    rows.push_back(r);
  }
  return rows;
}

void emit_tradeoff_table(const std::vector<ResultRow>& rows, std::ostream& os, bool aligned) {
  struct Agg {
    std::string dataset;
    int64_t bits = 0, raw = 0;
    double savings = 0;
    std::vector<double> accs;
    int epochs = 0;
  };
  std::map<std::tuple<std::string, int64_t, int>, Agg> groups;
  for (const auto& r : rows) {
    auto& a = groups[{r.scheme, r.C, r.q.value_or(99)}];
    a.dataset = r.dataset;
    a.bits = r.bits_inference;
    a.raw = r.raw_bits;
    a.savings = r.savings;
    a.accs.push_back(r.accuracy);
    a.epochs = r.epochs;
  }
  const char* header =
      "scheme\tdataset\tC\tq\tbits_per_inference\traw_bits\tsavings\tmean_accuracy\taccuracy_stddev\tepochs\tseeds";
  std::vector<std::vector<std::string>> table;
  table.push_back({});
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, '\t')) table.back().push_back(col);
  }
  for (const auto& [key, a] : groups) {
    const auto& [scheme, C, qv] = key;
    double mean = 0;
    for (double v : a.accs) mean += v;
    mean /= static_cast<double>(a.accs.size());
    double var = 0;
    for (double v : a.accs) var += (v - mean) * (v - mean);
    const double stddev = a.accs.size() > 1 ? std::sqrt(var / static_cast<double>(a.accs.size() - 1)) : 0.0;
    table.push_back({scheme, a.dataset, std::to_string(C), qv == 99 ? "none" : std::to_string(qv),
                     std::to_string(a.bits), std::to_string(a.raw), fmt(a.savings, 4), fmt(mean, 4),
                     fmt(stddev, 4), std::to_string(a.epochs), std::to_string(a.accs.size())});
  }
  if (!aligned) {
    for (const auto& row : table) {
      for (size_t i = 0; i < row.size(); ++i) os << (i ? "\t" : "") << row[i];
      os << '\n';
    }
    return;
  }
  std::vector<size_t> widths(table[0].size(), 0);
  for (const auto& row : table)
    for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  for (const auto& row : table) {
    for (size_t i = 0; i < row.size(); ++i) {
      os << row[i] << std::string(widths[i] - row[i].size() + (i + 1 < row.size() ? 2 : 0), ' ');
    }
    os << '\n';
  }
}

void write_manifest(const ExperimentConfig& cfg, std::ostream& os) {
  os << "tool = splitnn 1.0.0\n";
  os << "dataset = " << cfg.dataset << '\n';
  os << "schemes =";
  for (const auto& s : cfg.schemes) os << ' ' << s;
  os << '\n';
  os << "c_values =";
  for (auto c : cfg.c_values) os << ' ' << c;
  os << '\n';
  os << "q_values =";
  for (const auto& q : cfg.q_values) os << ' ' << q_str(q);
  os << '\n';
  os << "seeds =";
  for (auto s : cfg.seeds) os << ' ' << s;
  os << '\n';
  os << "lr = " << cfg.lr << '\n'
     << "batch = " << cfg.batch << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "optimizer = " << cfg.optimizer << '\n'
     << "lambda = " << cfg.lambda << '\n'
     << "mode = " << cfg.mode << '\n'
     << "train_quantizer = " << cfg.train_quantizer << '\n'
     << "plateau_patience = " << cfg.plateau_patience << '\n'
     << "train_limit = " << cfg.train_limit << '\n'
     << "data_seed = " << cfg.data_seed << '\n'
     << "digits_train = " << cfg.digits_train << '\n'
     << "digits_test = " << cfg.digits_test << '\n'
     << "series_length = " << cfg.series_length << '\n'
     << "fdml_activation = " << cfg.fdml_activation << '\n';
  if (!cfg.mnist_dir.empty()) os << "mnist_dir = " << cfg.mnist_dir << '\n';
}

}  // namespace splitnn
