#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splitnn/split_model.hpp"
#include "splitnn/topology.hpp"

namespace splitnn {

struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

enum class Optimizer { Sgd, Adam };
enum class TrainMode { Centralized, Distributed };

struct TrainConfig {
  double lr = 0.01;
  int64_t batch = 32;
  int epochs = 1;
  uint64_t seed = 1;
  QuantizerMode train_quantizer = QuantizerMode::Off;  // Off or Ste
  Optimizer optimizer = Optimizer::Sgd;
  double lambda = 0.0;
  // Literal protocol order: the aggregator updates w_0 first and sends
  // downstream gradients computed at the updated w_0. Breaks exact
  // equivalence with the centralized step; off by default.
  bool sequential_update = false;
  int plateau_patience = 0;  // stop after this many epochs without eval-loss improvement (0 = off)

  void validate() const;
};

struct Message {
  enum class Role { Code, DownstreamGrad };
  int round = 0;
  bool uplink = false;
  int node = 0;
  Role role = Role::Code;
  int64_t values = 0;  // payload element count
  int64_t bits = 0;
};

struct ProtocolTrace {
  std::vector<Message> messages;

  // Per round: exactly N uplink codes, then N downlink gradients.
  void validate(int num_nodes) const;
  int64_t total_bits(bool uplink) const;
  int rounds() const;
  void write_tsv(std::ostream&) const;
};

struct StepResult {
  double loss = 0.0;
};

struct RoundResult {
  double loss = 0.0;
  ProtocolTrace trace;
};

struct Batch {
  std::vector<Tensor> inputs;  // one per node, (m, ...)
  std::vector<int> labels;
  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

// Owns the graphs and optimizer state for one topology. Both step flavors
// update every owner with gradients taken at the pre-update parameters, so
// they produce identical parameters on identical inputs.
class Trainer {
 public:
  Trainer(const SplitTopology& topo, TrainConfig cfg);

  StepResult centralized_step(ModelParams& params, const Batch& batch);
  RoundResult distributed_round(ModelParams& params, const Batch& batch);

  const SplitTopology& topology() const { return topo_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  SplitGraph& split_graph(int64_t m);
  NodeGraph& node_graph(int node, int64_t m);
  AggGraph& agg_graph(int64_t m);
  void check_finite_loss(double loss) const;
  void apply_updates(ModelParams& params,
                     const std::vector<std::pair<std::string, const Tensor*>>& named_grads);

  SplitTopology topo_;
  TrainConfig cfg_;
  std::map<int64_t, std::unique_ptr<SplitGraph>> split_graphs_;
  std::map<std::pair<int, int64_t>, std::unique_ptr<NodeGraph>> node_graphs_;
  std::map<int64_t, std::unique_ptr<AggGraph>> agg_graphs_;
  // adaptive-moment state, keyed by parameter name
  std::map<std::string, Tensor> adam_m_, adam_v_;
  int64_t adam_t_ = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  ProtocolTrace trace;  // distributed mode only
  bool diverged = false;
  int rounds = 0;
};

// Feature-partitioned dataset: per-node tensors indexed sample-major.
struct SplitDataset {
  std::vector<Tensor> train_features;  // per node: (n, per-sample...)
  std::vector<int> train_labels;
  std::vector<Tensor> eval_features;
  std::vector<int> eval_labels;

  int64_t train_count() const { return static_cast<int64_t>(train_labels.size()); }
  int64_t eval_count() const { return static_cast<int64_t>(eval_labels.size()); }
};

Tensor gather_rows(const Tensor& features, const std::vector<int64_t>& rows);

TrainResult train(const SplitTopology&, const SplitDataset&, const TrainConfig&, TrainMode mode);

double evaluate_accuracy(const SplitTopology&, const ModelParams&, const std::vector<Tensor>& features,
                         const std::vector<int>& labels, int64_t batch = 256);
// mean cross-entropy on the inference path
double evaluate_loss(const SplitTopology&, const ModelParams&, const std::vector<Tensor>& features,
                     const std::vector<int>& labels, int64_t batch = 256);

}  // namespace splitnn
