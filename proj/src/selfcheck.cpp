#include <cmath>
#include <ostream>

#include "splitnn/baselines.hpp"
#include "splitnn/comm_ledger.hpp"
#include "splitnn/datasets.hpp"
#include "splitnn/experiment.hpp"
#include "splitnn/split_model.hpp"

namespace splitnn {

namespace {

bool report(std::ostream& os, const std::string& name, bool ok, const std::string& detail = "") {
  os << (ok ? "PASS" : "FAIL") << "  " << name;
  if (!detail.empty()) os << "  (" << detail << ")";
  os << '\n';
  return ok;
}

SplitTopology tiny_topology(std::optional<int> q) {
  SplitTopology topo;
  for (int i = 0; i < 2; ++i) {
    NodeStack s;
    s.input_shape = {6};
    s.layers.push_back(FullyConnectedSpec{6, 4, Activation::Tanh});
    s.layers.push_back(FullyConnectedSpec{4, 3, Activation::Sigmoid});
    topo.nodes.push_back(std::move(s));
  }
  if (q) topo.quantizer = QuantizerSpec{*q, 0.0, 1.0};
  topo.aggregator.input_shape = {6};
  topo.aggregator.layers.push_back(FullyConnectedSpec{6, 8, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{8, 3, Activation::Identity});
  topo.num_classes = 3;
  topo.validate();
  return topo;
}

Batch random_batch(const SplitTopology& topo, int64_t m, Rng& rng) {
  Batch b;
  for (int node = 0; node < topo.num_nodes(); ++node) {
    Tensor x(batched_shape(topo.nodes[static_cast<size_t>(node)].input_shape, m));
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    b.inputs.push_back(std::move(x));
  }
  for (int64_t i = 0; i < m; ++i) b.labels.push_back(static_cast<int>(rng.below(topo.num_classes)));
  return b;
}

double max_param_delta(const ModelParams& a, const ModelParams& b) {
  double worst = 0.0;
  for (size_t o = 0; o < a.owners.size(); ++o)
    for (const auto& [name, t] : a.owners[o]) {
      const Tensor& u = b.owners[o].at(name);
      for (int64_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - u[i]));
    }
  return worst;
}

}  // namespace

bool run_self_checks(std::ostream& os) {
  bool all = true;

  // gradients vs central differences on a full split graph
  {
    bool ok = true;
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      SplitTopology topo = tiny_topology(std::nullopt);
      auto sg = build_split_graph(topo, 4, QuantizerMode::Off, 1e-3);
      Rng rng(seed);
      Batch b = random_batch(topo, 4, rng);
      for (int node = 1; node <= topo.num_nodes(); ++node)
        sg->g.bind("x" + std::to_string(node), b.inputs[static_cast<size_t>(node - 1)]);
      sg->g.bind("labels", labels_tensor(b.labels));
      bind_params(sg->g, init_params(topo, seed));
      auto rep = sg->g.grad_check(1e-5, 1e-4);
      worst = std::max(worst, rep.worst());
      ok = ok && rep.pass;
    }
    all &= report(os, "gradient oracle (finite differences)", ok, "max rel err " + std::to_string(worst));
  }

  // quantizer properties on a grid
  {
    bool ok = true;
    for (int q = 1; q <= 4 && ok; ++q) {
      QuantizerSpec spec{q, 0.0, 1.0};
      const double bound = 1.0 / std::pow(2.0, q + 1);
      int32_t prev = 0;
      for (int i = 0; i <= 1000; ++i) {
        const double x = -0.2 + 1.4 * i / 1000.0;
        const int32_t lv = spec.level_of(x);
        const double deq = spec.value_of(lv);
        const double clipped = std::clamp(x, 0.0, 1.0);
        if (std::abs(deq - clipped) > bound + 1e-15) ok = false;
        if (i > 0 && lv < prev) ok = false;
        if (spec.level_of(deq) != lv) ok = false;  // idempotence on levels
        prev = lv;
      }
    }
    all &= report(os, "quantizer error bound / monotonicity / idempotence", ok);
  }

  // distributed protocol == centralized descent
  {
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      SplitTopology topo = tiny_topology(seed % 2 == 0 ? std::optional<int>(3) : std::nullopt);
      TrainConfig cfg;
      cfg.lr = 0.05;
      cfg.lambda = 1e-3;
      cfg.optimizer = Optimizer::Sgd;
      cfg.seed = seed;
      cfg.train_quantizer = topo.quantizer ? QuantizerMode::Ste : QuantizerMode::Off;
      ModelParams pc = init_params(topo, seed);
      ModelParams pd = init_params(topo, seed);
      Rng rng(seed * 17 + 1);
      Batch b = random_batch(topo, 5, rng);
      Trainer tc(topo, cfg), td(topo, cfg);
      tc.centralized_step(pc, b);
      td.distributed_round(pd, b);
      worst = std::max(worst, max_param_delta(pc, pd));
    }
    all &= report(os, "protocol equivalence (distributed == centralized)", worst < 1e-9,
                  "max param delta " + std::to_string(worst));
  }

  // bit accounting
  {
    const auto mnist = bits_per_inference(image_split_topology(64, 4));
    const auto water = bits_per_inference(series_split_topology(3));
    const int64_t raw = raw_baseline_bits({{196, 196, 196, 196}, 8});
    const bool ok = mnist.total == 256 && mnist.per_node[0] == 64 && water.per_node[0] == 27 && raw == 6272;
    all &= report(os, "bit accounting (256 / 6272 / 27)", ok);
  }

  // single-node split == plain composition
  {
    SplitTopology topo = tiny_topology(std::nullopt);
    topo.nodes.resize(1);
    topo.aggregator.input_shape = {3};
    topo.aggregator.layers[0] = FullyConnectedSpec{3, 8, Activation::Relu};
    topo.validate();
    ModelParams params = init_params(topo, 9);
    Rng rng(99);
    Batch b = random_batch(topo, 4, rng);

    auto sg = build_split_graph(topo, 4, QuantizerMode::Off, 0.0);
    sg->g.bind("x1", b.inputs[0]);
    sg->g.bind("labels", labels_tensor(b.labels));
    bind_params(sg->g, params);
    sg->g.forward();
    const Tensor split_probs = sg->g.value(sg->probs_id);

    Graph plain;
    int x = plain.input("x1", b.inputs[0].shape);
    int cur = x;
    size_t li = 0;
    for (const auto& l : topo.nodes[0].layers) cur = append_layer(plain, cur, l, "node1/l" + std::to_string(++li), false);
    li = 0;
    for (const auto& l : topo.aggregator.layers) cur = append_layer(plain, cur, l, "agg/l" + std::to_string(++li), false);
    int probs = plain.softmax(cur);
    plain.set_output(probs);
    plain.bind("x1", b.inputs[0]);
    bind_params(plain, params);
    const Tensor plain_probs = plain.forward();

    double worst = 0.0;
    for (int64_t i = 0; i < split_probs.size(); ++i)
      worst = std::max(worst, std::abs(split_probs[i] - plain_probs[i]));
    all &= report(os, "degenerate split equals centralized composition", worst < 1e-12,
                  "max delta " + std::to_string(worst));
  }

  // loss decomposability in lambda
  {
    SplitTopology topo = tiny_topology(std::nullopt);
    ModelParams params = init_params(topo, 3);
    Rng rng(5);
    Batch b = random_batch(topo, 6, rng);
    std::vector<Tensor> inputs = b.inputs;
    const double lam = 3e-3;
    const double l0 = total_loss(topo, params, inputs, b.labels, {0.0});
    const double l1 = total_loss(topo, params, inputs, b.labels, {lam});
    double sq = 0.0;
    for (const auto& owner : params.owners)
      for (const auto& [name, t] : owner)
        for (double v : t.data) sq += v * v;
    const double delta = std::abs((l1 - l0) - lam * sq);
    all &= report(os, "loss decomposes into data term + L2 term", delta < 1e-10,
                  "residual " + std::to_string(delta));
  }

  return all;
}

}  // namespace splitnn
