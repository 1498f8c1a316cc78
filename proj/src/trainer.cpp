#include "splitnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <ostream>

#include "splitnn/rng.hpp"

namespace splitnn {

namespace detail {
std::pair<double, double> eval_metrics(const SplitTopology&, const ModelParams&, const std::vector<Tensor>&,
                                       const std::vector<int>&, int64_t batch);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("step size must be positive");
  if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (train_quantizer == QuantizerMode::Hard)
    throw std::invalid_argument("training across a hard quantizer is undefined; use Off or Ste");
}

void ProtocolTrace::validate(int num_nodes) const {
  if (messages.size() % (2 * static_cast<size_t>(num_nodes)) != 0)
    throw ProtocolError("trace length " + std::to_string(messages.size()) + " is not a whole number of rounds");
  for (size_t i = 0; i < messages.size(); ++i) {
    const Message& msg = messages[i];
    const size_t pos = i % (2 * static_cast<size_t>(num_nodes));
    const bool expect_uplink = pos < static_cast<size_t>(num_nodes);
    const int expect_node = static_cast<int>(expect_uplink ? pos + 1 : pos - static_cast<size_t>(num_nodes) + 1);
    if (msg.uplink != expect_uplink || msg.node != expect_node ||
        msg.role != (expect_uplink ? Message::Role::Code : Message::Role::DownstreamGrad))
      throw ProtocolError("malformed trace at message " + std::to_string(i) + ": expected " +
                          (expect_uplink ? "uplink code" : "downlink gradient") + " from node " +
                          std::to_string(expect_node));
  }
}

int64_t ProtocolTrace::total_bits(bool uplink) const {
  int64_t total = 0;
  for (const auto& m : messages)
    if (m.uplink == uplink) total += m.bits;
  return total;
}

int ProtocolTrace::rounds() const {
  int last = -1;
  for (const auto& m : messages) last = std::max(last, m.round);
  return last + 1;
}

void ProtocolTrace::write_tsv(std::ostream& os) const {
  os << "round\tdirection\tnode\trole\tvalues\tbits\n";
  for (const auto& m : messages)
    os << m.round << '\t' << (m.uplink ? "uplink" : "downlink") << '\t' << m.node << '\t'
       << (m.role == Message::Role::Code ? "code" : "downstream-gradient") << '\t' << m.values << '\t'
       << m.bits << '\n';
}

Trainer::Trainer(const SplitTopology& topo, TrainConfig cfg) : topo_(topo), cfg_(cfg) {
  topo_.validate();
  cfg_.validate();
  if (cfg_.train_quantizer == QuantizerMode::Ste && !topo_.quantizer)
    cfg_.train_quantizer = QuantizerMode::Off;  // nothing to pass gradients through
}

SplitGraph& Trainer::split_graph(int64_t m) {
  auto it = split_graphs_.find(m);
  if (it == split_graphs_.end())
    it = split_graphs_.emplace(m, build_split_graph(topo_, m, cfg_.train_quantizer, cfg_.lambda)).first;
  return *it->second;
}

NodeGraph& Trainer::node_graph(int node, int64_t m) {
  auto key = std::make_pair(node, m);
  auto it = node_graphs_.find(key);
  if (it == node_graphs_.end())
    it = node_graphs_.emplace(key, build_node_graph(topo_, node, m, cfg_.train_quantizer)).first;
  return *it->second;
}

AggGraph& Trainer::agg_graph(int64_t m) {
  auto it = agg_graphs_.find(m);
  if (it == agg_graphs_.end()) it = agg_graphs_.emplace(m, build_agg_graph(topo_, m, cfg_.lambda)).first;
  return *it->second;
}

void Trainer::check_finite_loss(double loss) const {
  if (!std::isfinite(loss))
    throw TrainingDiverged("non-finite loss " + std::to_string(loss) + "; reduce the step size");
}

void Trainer::apply_updates(ModelParams& params,
                            const std::vector<std::pair<std::string, const Tensor*>>& named_grads) {
  for (const auto& [name, grad] : named_grads)
    if (!grad->all_finite()) throw TrainingDiverged("non-finite gradient for " + name);

  if (cfg_.optimizer == Optimizer::Adam) ++adam_t_;
  for (const auto& [name, grad] : named_grads) {
    Tensor* param = nullptr;
    for (auto& owner : params.owners) {
      auto it = owner.find(name);
      if (it != owner.end()) {
        param = &it->second;
        break;
      }
    }
    if (!param) throw std::logic_error("update for unknown parameter " + name);
    Tensor& p = *param;
    const Tensor& g = *grad;
    if (cfg_.optimizer == Optimizer::Sgd) {
      for (int64_t i = 0; i < p.size(); ++i) p[i] -= cfg_.lr * g[i];
    } else {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      Tensor& m = adam_m_.try_emplace(name, Tensor(p.shape)).first->second;
      Tensor& v = adam_v_.try_emplace(name, Tensor(p.shape)).first->second;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
      for (int64_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }
}

namespace {

// deterministic owner-major, name-sorted order shared by both step flavors
std::vector<std::pair<std::string, const Tensor*>> grads_in_update_order(
    const ModelParams& params, const std::function<const Tensor&(const std::string&)>& lookup) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& owner : params.owners)
    for (const auto& [name, tensor] : owner) out.emplace_back(name, &lookup(name));
  return out;
}

}  // namespace

StepResult Trainer::centralized_step(ModelParams& params, const Batch& batch) {
  if (batch.labels.empty()) throw std::invalid_argument("empty batch");
  SplitGraph& sg = split_graph(batch.size());
  for (int node = 1; node <= topo_.num_nodes(); ++node)
    sg.g.bind(sg.input_ids[static_cast<size_t>(node - 1)], batch.inputs[static_cast<size_t>(node - 1)]);
  sg.g.bind(sg.labels_id, labels_tensor(batch.labels));
  bind_params(sg.g, params);

  const double loss = sg.g.forward()[0];
  check_finite_loss(loss);
  sg.g.backward();

  auto named = grads_in_update_order(params, [&](const std::string& n) -> const Tensor& { return sg.g.grad(n); });
  apply_updates(params, named);
  return {loss};
}

RoundResult Trainer::distributed_round(ModelParams& params, const Batch& batch) {
  if (batch.labels.empty()) throw std::invalid_argument("empty batch");
  const int64_t m = batch.size();
  const int n_nodes = topo_.num_nodes();
  RoundResult result;

  const bool quantized = topo_.quantizer && cfg_.train_quantizer == QuantizerMode::Ste;
  const int code_bits = quantized ? topo_.quantizer->bits : 32;

  // (1) each node runs its compressor and "sends" the code
  std::vector<Tensor> codes;
  for (int node = 1; node <= n_nodes; ++node) {
    NodeGraph& ng = node_graph(node, m);
    ng.g.bind(ng.input_id, batch.inputs[static_cast<size_t>(node - 1)]);
    for (const auto& [name, tensor] : params.owners[static_cast<size_t>(node)]) ng.g.bind(name, tensor);
    Tensor code = ng.g.forward();
    // the base station reconstructs from the transmitted levels alone
    if (quantized) code = dequantize(*topo_.quantizer, ng.g.node(ng.code_id).iaux, code.shape);
    result.trace.messages.push_back(
        {0, true, node, Message::Role::Code, code.size(), static_cast<int64_t>(code_bits) * code.size()});
    codes.push_back(std::move(code));
  }

  // (2) the base station computes its own gradients and one downstream
  // gradient per node
  AggGraph& ag = agg_graph(m);
  auto run_agg = [&]() {
    for (int node = 1; node <= n_nodes; ++node)
      ag.g.bind(ag.code_input_ids[static_cast<size_t>(node - 1)], codes[static_cast<size_t>(node - 1)]);
    ag.g.bind(ag.labels_id, labels_tensor(batch.labels));
    for (const auto& [name, tensor] : params.owners[0]) ag.g.bind(name, tensor);
    double agg_loss = ag.g.forward()[0];
    check_finite_loss(agg_loss);
    ag.g.backward();
    return agg_loss;
  };
  double agg_loss = run_agg();

  std::vector<Tensor> agg_grads;  // owner-0 gradients at pre-update params
  for (const auto& [name, tensor] : params.owners[0]) agg_grads.push_back(ag.g.grad(name));

  if (cfg_.sequential_update) {
    // literal protocol order: update w_0 now, then recompute the downstream
    // gradients the nodes receive at the updated w_0
    std::vector<std::pair<std::string, const Tensor*>> agg_named;
    size_t k = 0;
    for (const auto& [name, tensor] : params.owners[0]) agg_named.emplace_back(name, &agg_grads[k++]);
    apply_updates(params, agg_named);
    run_agg();
  }

  std::vector<Tensor> downstream;  // dL/dc_i
  for (int node = 1; node <= n_nodes; ++node) {
    Tensor g = ag.g.grad(ag.code_input_ids[static_cast<size_t>(node - 1)]);
    result.trace.messages.push_back(
        {0, false, node, Message::Role::DownstreamGrad, g.size(), 32 * g.size()});
    downstream.push_back(std::move(g));
  }

  // (3) each node backpropagates the received gradient through its
  // compressor and adds its own regularizer gradient
  std::vector<std::map<std::string, Tensor>> node_grads(static_cast<size_t>(n_nodes));
  double reg_terms = 0.0;
  for (int node = 1; node <= n_nodes; ++node) {
    NodeGraph& ng = node_graph(node, m);
    ng.g.backward_from(ng.code_id, downstream[static_cast<size_t>(node - 1)]);
    for (const auto& [name, tensor] : params.owners[static_cast<size_t>(node)]) {
      Tensor g = ng.g.grad(name);
      if (cfg_.lambda != 0.0) {
        double sq = 0.0;
        for (int64_t i = 0; i < tensor.size(); ++i) {
          g[i] += 2.0 * tensor[i] * cfg_.lambda;
          sq += tensor[i] * tensor[i];
        }
        reg_terms += cfg_.lambda * sq;
      }
      node_grads[static_cast<size_t>(node - 1)].emplace(name, std::move(g));
    }
  }
  result.loss = agg_loss;
  if (cfg_.lambda != 0.0) {
    // rebuild the same left-fold over node regularizers the centralized loss
    // uses (parameter declaration order)
    double total = agg_loss;
    for (int node = 1; node <= n_nodes; ++node)
      for (const auto& decl : stack_param_decls(topo_.nodes[static_cast<size_t>(node - 1)], owner_prefix(node))) {
        const Tensor& tensor = params.owners[static_cast<size_t>(node)].at(decl.name);
        double sq = 0.0;
        for (int64_t i = 0; i < tensor.size(); ++i) sq += tensor[i] * tensor[i];
        total = total + cfg_.lambda * sq;
      }
    result.loss = total;
    (void)reg_terms;
  }

  // (4) simultaneous update of all owners
  std::vector<std::pair<std::string, const Tensor*>> named;
  if (!cfg_.sequential_update) {
    size_t k = 0;
    for (const auto& [name, tensor] : params.owners[0]) named.emplace_back(name, &agg_grads[k++]);
  }
  for (int node = 1; node <= n_nodes; ++node)
    for (const auto& [name, g] : node_grads[static_cast<size_t>(node - 1)]) named.emplace_back(name, &g);
  apply_updates(params, named);

  result.trace.validate(n_nodes);
  return result;
}

Tensor gather_rows(const Tensor& features, const std::vector<int64_t>& rows) {
  const int64_t per = features.size() / features.shape[0];
  std::vector<int64_t> shape = features.shape;
  shape[0] = static_cast<int64_t>(rows.size());
  Tensor out(shape);
  for (size_t r = 0; r < rows.size(); ++r)
    std::memcpy(out.data.data() + static_cast<int64_t>(r) * per, features.data.data() + rows[r] * per,
                sizeof(double) * static_cast<size_t>(per));
  return out;
}

namespace {

Batch make_batch(const SplitDataset& data, const std::vector<int64_t>& rows) {
  Batch b;
  for (const auto& f : data.train_features) b.inputs.push_back(gather_rows(f, rows));
  b.labels.reserve(rows.size());
  for (int64_t r : rows) b.labels.push_back(data.train_labels[static_cast<size_t>(r)]);
  return b;
}

}  // namespace

TrainResult train(const SplitTopology& topo, const SplitDataset& data, const TrainConfig& cfg, TrainMode mode) {
  cfg.validate();
  if (data.train_count() == 0) throw std::invalid_argument("no training data");
  if (static_cast<int>(data.train_features.size()) != topo.num_nodes())
    throw std::invalid_argument("dataset has " + std::to_string(data.train_features.size()) +
                                " feature groups for " + std::to_string(topo.num_nodes()) + " nodes");

  TrainResult result;
  result.params = init_params(topo, cfg.seed);
  Trainer trainer(topo, cfg);

  std::vector<int64_t> order(static_cast<size_t>(data.train_count()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

  double best_eval_loss = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  int round = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x100 + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t seen = 0;
    try {
      for (int64_t start = 0; start < data.train_count(); start += cfg.batch) {
        const int64_t end = std::min(start + cfg.batch, data.train_count());
        std::vector<int64_t> rows(order.begin() + start, order.begin() + end);
        Batch batch = make_batch(data, rows);
        double loss;
        if (mode == TrainMode::Centralized) {
          loss = trainer.centralized_step(result.params, batch).loss;
        } else {
          RoundResult rr = trainer.distributed_round(result.params, batch);
          loss = rr.loss;
          for (Message& msg : rr.trace.messages) {
            msg.round = round;
            result.trace.messages.push_back(msg);
          }
        }
        ++round;
        loss_sum += loss * static_cast<double>(batch.size());
        seen += batch.size();
      }
    } catch (const TrainingDiverged&) {
      result.diverged = true;
      result.rounds = round;
      return result;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    if (data.eval_count() > 0) {
      const auto metrics = detail::eval_metrics(topo, result.params, data.eval_features, data.eval_labels, 256);
      stats.eval_accuracy = metrics.first;
      stats.eval_loss = metrics.second;
    }
    result.history.push_back(stats);

    if (cfg.plateau_patience > 0 && data.eval_count() > 0) {
      if (stats.eval_loss < best_eval_loss - 1e-9) {
        best_eval_loss = stats.eval_loss;
        stale_epochs = 0;
      } else if (++stale_epochs >= cfg.plateau_patience) {
        break;
      }
    }
  }
  result.rounds = round;
  return result;
}

namespace {

// shared batched evaluation loop over the inference path
template <class Fn>
void for_each_eval_batch(const SplitTopology& topo, const ModelParams& params,
                         const std::vector<Tensor>& features, const std::vector<int>& labels, int64_t batch,
                         double lambda, Fn&& fn) {
  const int64_t n = static_cast<int64_t>(labels.size());
  std::map<int64_t, std::unique_ptr<SplitGraph>> cache;
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t end = std::min(start + batch, n);
    std::vector<int64_t> rows;
    for (int64_t r = start; r < end; ++r) rows.push_back(r);
    const int64_t m = end - start;
    auto it = cache.find(m);
    if (it == cache.end())
      it = cache
               .emplace(m, build_split_graph(topo, m, topo.quantizer ? QuantizerMode::Hard : QuantizerMode::Off,
                                             lambda))
               .first;
    SplitGraph& sg = *it->second;
    for (int node = 1; node <= topo.num_nodes(); ++node)
      sg.g.bind(sg.input_ids[static_cast<size_t>(node - 1)],
                gather_rows(features[static_cast<size_t>(node - 1)], rows));
    std::vector<int> batch_labels(labels.begin() + start, labels.begin() + end);
    sg.g.bind(sg.labels_id, labels_tensor(batch_labels));
    bind_params(sg.g, params);
    sg.g.forward();
    fn(sg, batch_labels, start);
  }
}

}  // namespace

namespace detail {

// one forward pass per batch yields both the accuracy and the mean data loss
std::pair<double, double> eval_metrics(const SplitTopology& topo, const ModelParams& params,
                                       const std::vector<Tensor>& features, const std::vector<int>& labels,
                                       int64_t batch) {
  if (labels.empty()) throw std::invalid_argument("empty evaluation set");
  int64_t correct = 0;
  double ce_sum = 0.0;
  for_each_eval_batch(topo, params, features, labels, batch, 0.0,
                      [&](SplitGraph& sg, const std::vector<int>& batch_labels, int64_t) {
                        const Tensor& probs = sg.g.value(sg.probs_id);
                        const int64_t k = probs.shape[1];
                        for (int64_t r = 0; r < probs.shape[0]; ++r) {
                          int64_t arg = 0;
                          for (int64_t j = 1; j < k; ++j)
                            if (probs[r * k + j] > probs[r * k + arg]) arg = j;
                          if (arg == batch_labels[static_cast<size_t>(r)]) ++correct;
                        }
                        ce_sum += sg.g.value(sg.ce_id)[0] * static_cast<double>(batch_labels.size());
                      });
  return {static_cast<double>(correct) / static_cast<double>(labels.size()),
          ce_sum / static_cast<double>(labels.size())};
}

}  // namespace detail

double evaluate_accuracy(const SplitTopology& topo, const ModelParams& params,
                         const std::vector<Tensor>& features, const std::vector<int>& labels, int64_t batch) {
  return detail::eval_metrics(topo, params, features, labels, batch).first;
}

double evaluate_loss(const SplitTopology& topo, const ModelParams& params, const std::vector<Tensor>& features,
                     const std::vector<int>& labels, int64_t batch) {
  return detail::eval_metrics(topo, params, features, labels, batch).second;
}

}  // namespace splitnn
