#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "splitnn/datasets.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/trainer.hpp"

using namespace splitnn;

namespace {

Tensor rnd(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

SplitTopology fc_topology(int nodes, std::optional<int> q, int classes = 4) {
  SplitTopology topo;
  for (int i = 0; i < nodes; ++i) {
    NodeStack s;
    s.input_shape = {6};
    s.layers.push_back(FullyConnectedSpec{6, 4, Activation::Tanh});
    s.layers.push_back(FullyConnectedSpec{4, 2, Activation::Sigmoid});
    topo.nodes.push_back(std::move(s));
  }
  if (q) topo.quantizer = QuantizerSpec{*q, 0.0, 1.0};
  const int64_t c = 2 * nodes;
  topo.aggregator.input_shape = {c};
  topo.aggregator.layers.push_back(FullyConnectedSpec{c, 6, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{6, classes, Activation::Identity});
  topo.num_classes = classes;
  topo.validate();
  return topo;
}

Batch random_batch(const SplitTopology& topo, int64_t m, Rng& rng) {
  Batch b;
  for (int node = 0; node < topo.num_nodes(); ++node)
    b.inputs.push_back(rnd(batched_shape(topo.nodes[static_cast<size_t>(node)].input_shape, m), rng));
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

SplitDataset random_dataset(const SplitTopology& topo, int64_t n_train, int64_t n_eval, uint64_t seed) {
  // labels carry signal: class = argmax over a fixed random projection
  Rng rng(seed);
  SplitDataset ds;
  std::vector<Tensor> proj;
  for (int node = 0; node < topo.num_nodes(); ++node)
    proj.push_back(rnd({topo.num_classes, topo.feature_dim(node)}, rng));
  auto emit = [&](int64_t n, std::vector<Tensor>& feats, std::vector<int>& labels) {
    for (int node = 0; node < topo.num_nodes(); ++node)
      feats.push_back(rnd(batched_shape(topo.nodes[static_cast<size_t>(node)].input_shape, n), rng));
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<size_t>(topo.num_classes), 0.0);
      for (int node = 0; node < topo.num_nodes(); ++node) {
        const int64_t d = topo.feature_dim(node);
        for (int64_t k = 0; k < topo.num_classes; ++k)
          for (int64_t j = 0; j < d; ++j)
            scores[static_cast<size_t>(k)] += proj[static_cast<size_t>(node)][k * d + j] *
                                              feats[static_cast<size_t>(node)][i * d + j];
      }
      int best = 0;
      for (int k = 1; k < topo.num_classes; ++k)
        if (scores[static_cast<size_t>(k)] > scores[static_cast<size_t>(best)]) best = k;
      labels.push_back(best);
    }
  };
  emit(n_train, ds.train_features, ds.train_labels);
  emit(n_eval, ds.eval_features, ds.eval_labels);
  return ds;
}

}  // namespace

TEST_CASE("one centralized step descends the loss on the same batch") {
  int descended = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    SplitTopology topo = fc_topology(2, std::nullopt);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.optimizer = Optimizer::Sgd;
    cfg.seed = seed;
    ModelParams params = init_params(topo, seed);
    Rng rng(seed + 100);
    Batch batch = random_batch(topo, 8, rng);
    Trainer trainer(topo, cfg);
    const double before = trainer.centralized_step(params, batch).loss;
    // evaluate the loss again at the updated parameters on the same batch
    Trainer probe(topo, cfg);
    const double after = probe.centralized_step(params, batch).loss;
    if (after < before) ++descended;
  }
  CHECK(descended == 20);
}

TEST_CASE("gradients used by the trainer match the finite-difference oracle") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    SplitTopology topo = fc_topology(2, 3);
    auto sg = build_split_graph(topo, 4, QuantizerMode::Ste, 1e-3);
    Rng rng(seed);
    Batch b = random_batch(topo, 4, rng);
    sg->g.bind("x1", b.inputs[0]);
    sg->g.bind("x2", b.inputs[1]);
    sg->g.bind("labels", labels_tensor(b.labels));
    bind_params(sg->g, init_params(topo, seed));
    auto rep = sg->g.grad_check(1e-5, 1e-4);
    CHECK(rep.pass);
  }
}

TEST_CASE("distributed round trace has the paper's message pattern and sizes") {
  SplitTopology topo = image_split_topology(64, 4);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.optimizer = Optimizer::Sgd;

  SUBCASE("real-valued training messages") {
    cfg.train_quantizer = QuantizerMode::Off;
    ModelParams params = init_params(topo, 1);
    Trainer trainer(topo, cfg);
    Rng rng(2);
    Batch batch;
    const int64_t m = 3;
    for (int node = 0; node < 4; ++node) batch.inputs.push_back(rnd({m, 14, 14, 1}, rng, 0.0, 1.0));
    batch.labels = {1, 7, 3};
    RoundResult rr = trainer.distributed_round(params, batch);
    REQUIRE(rr.trace.messages.size() == 8);
    for (int i = 0; i < 4; ++i) {
      const Message& up = rr.trace.messages[static_cast<size_t>(i)];
      CHECK(up.uplink);
      CHECK(up.node == i + 1);
      CHECK(up.role == Message::Role::Code);
      CHECK(up.values == m * 16);
      CHECK(up.bits == m * 16 * 32);
    }
    for (int i = 4; i < 8; ++i) {
      const Message& down = rr.trace.messages[static_cast<size_t>(i)];
      CHECK_FALSE(down.uplink);
      CHECK(down.node == i - 3);
      CHECK(down.role == Message::Role::DownstreamGrad);
      CHECK(down.values == m * 16);
      CHECK(down.bits == m * 16 * 32);
    }
  }

  SUBCASE("quantized codes are billed at q bits per value") {
    cfg.train_quantizer = QuantizerMode::Ste;
    ModelParams params = init_params(topo, 1);
    Trainer trainer(topo, cfg);
    Rng rng(2);
    Batch batch;
    for (int node = 0; node < 4; ++node) batch.inputs.push_back(rnd({2, 14, 14, 1}, rng, 0.0, 1.0));
    batch.labels = {0, 9};
    RoundResult rr = trainer.distributed_round(params, batch);
    CHECK(rr.trace.messages[0].bits == 2 * 16 * 4);       // q=4 levels uplink
    CHECK(rr.trace.messages[4].bits == 2 * 16 * 32);      // float gradients downlink
  }
}

TEST_CASE("no protocol message matches raw-feature or parameter sizes") {
  SplitTopology topo = image_split_topology(64, 4);
  ModelParams params = init_params(topo, 1);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::Sgd;
  Trainer trainer(topo, cfg);
  Rng rng(3);
  Batch batch;
  const int64_t m = 5;
  for (int node = 0; node < 4; ++node) batch.inputs.push_back(rnd({m, 14, 14, 1}, rng, 0.0, 1.0));
  batch.labels = {0, 1, 2, 3, 4};
  RoundResult rr = trainer.distributed_round(params, batch);
  for (const auto& msg : rr.trace.messages) {
    for (int node = 0; node < 4; ++node) {
      CHECK(msg.values != topo.feature_dim(node));      // raw features
      CHECK(msg.values != m * topo.feature_dim(node));  // raw feature batch
    }
    for (size_t owner = 0; owner < params.owners.size(); ++owner)
      CHECK(msg.values != params.count(static_cast<int>(owner)));  // parameters
  }
}

TEST_CASE("distributed round equals the centralized step parameter for parameter") {
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 12; ++seed) {
    Rng shape_rng(seed);
    const int nodes = 1 + static_cast<int>(shape_rng.below(3));
    std::optional<int> q;
    if (seed % 3 == 0) q = 1 + static_cast<int>(shape_rng.below(6));
    SplitTopology topo = fc_topology(nodes, q, 3);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.lambda = seed % 2 ? 1e-3 : 0.0;
    cfg.optimizer = seed % 4 == 0 ? Optimizer::Adam : Optimizer::Sgd;
    cfg.train_quantizer = q ? QuantizerMode::Ste : QuantizerMode::Off;
    cfg.seed = seed;
    ModelParams pc = init_params(topo, seed);
    ModelParams pd = init_params(topo, seed);
    Trainer tc(topo, cfg), td(topo, cfg);
    Rng rng(seed + 50);
    for (int step = 0; step < 3; ++step) {
      Batch batch = random_batch(topo, 1 + rng.below(5), rng);
      const double lc = tc.centralized_step(pc, batch).loss;
      RoundResult rr = td.distributed_round(pd, batch);
      CHECK(std::abs(lc - rr.loss) < 1e-9);
      worst = std::max(worst, max_param_delta(pc, pd));
    }
  }
  CHECK(worst < 1e-9);
  MESSAGE("max parameter delta across modes: ", worst);
}

TEST_CASE("the literal sequential update order differs from the simultaneous default") {
  SplitTopology topo = fc_topology(2, std::nullopt);
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.optimizer = Optimizer::Sgd;
  TrainConfig seq = cfg;
  seq.sequential_update = true;
  ModelParams sim_params = init_params(topo, 2);
  ModelParams seq_params = init_params(topo, 2);
  Trainer sim(topo, cfg), sequential(topo, seq);
  Rng rng(9);
  Batch batch = random_batch(topo, 6, rng);
  sim.distributed_round(sim_params, batch);
  sequential.distributed_round(seq_params, batch);
  // aggregator parameters get the same update; node parameters see gradients
  // computed at the already-updated w_0, so they differ
  CHECK(max_param_delta(sim_params, seq_params) > 0.0);
  double agg_delta = 0.0;
  for (const auto& [name, t] : sim_params.owners[0]) {
    const Tensor& u = seq_params.owners[0].at(name);
    for (int64_t i = 0; i < t.size(); ++i) agg_delta = std::max(agg_delta, std::abs(t[i] - u[i]));
  }
  CHECK(agg_delta == 0.0);
}

TEST_CASE("training is deterministic and zero epochs return the initialization") {
  SplitTopology topo = fc_topology(2, std::nullopt);
  SplitDataset data = random_dataset(topo, 60, 20, 7);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 2;
  cfg.batch = 16;
  cfg.seed = 3;
  cfg.optimizer = Optimizer::Adam;

  TrainResult a = train(topo, data, cfg, TrainMode::Distributed);
  TrainResult b = train(topo, data, cfg, TrainMode::Distributed);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].eval_accuracy == b.history[e].eval_accuracy);
  }
  CHECK(max_param_delta(a.params, b.params) == 0.0);

  TrainConfig zero = cfg;
  zero.epochs = 0;
  TrainResult z = train(topo, data, zero, TrainMode::Centralized);
  CHECK(max_param_delta(z.params, init_params(topo, cfg.seed)) == 0.0);
  CHECK(z.history.empty());
}

TEST_CASE("a full run in both modes lands on the same parameters") {
  SplitTopology topo = fc_topology(2, std::nullopt);
  SplitDataset data = random_dataset(topo, 96, 32, 21);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 5;
  cfg.batch = 16;
  cfg.seed = 5;
  cfg.lambda = 1e-4;
  cfg.optimizer = Optimizer::Sgd;  // matches the update rule the oracle states
  TrainResult c = train(topo, data, cfg, TrainMode::Centralized);
  TrainResult d = train(topo, data, cfg, TrainMode::Distributed);
  CHECK_FALSE(c.diverged);
  CHECK_FALSE(d.diverged);
  CHECK(max_param_delta(c.params, d.params) < 1e-7);
  CHECK(c.rounds == d.rounds);
  // the distributed run carries a well-formed trace; the centralized run has none
  CHECK(d.trace.messages.size() == static_cast<size_t>(d.rounds) * 2 * 2);
  d.trace.validate(topo.num_nodes());
  CHECK(c.trace.messages.empty());
}

TEST_CASE("straight-through training at q=4 stays close to unquantized training") {
  SplitTopology base = fc_topology(2, std::nullopt);
  SplitDataset data = random_dataset(base, 240, 120, 33);
  TrainConfig cfg;
  cfg.lr = 0.03;
  cfg.epochs = 12;
  cfg.batch = 24;
  cfg.seed = 4;
  cfg.optimizer = Optimizer::Adam;

  TrainResult plain = train(base, data, cfg, TrainMode::Centralized);
  const double acc_plain = evaluate_accuracy(base, plain.params, data.eval_features, data.eval_labels);

  SplitTopology quantized = fc_topology(2, 4);
  TrainConfig ste = cfg;
  ste.train_quantizer = QuantizerMode::Ste;
  TrainResult hard = train(quantized, data, ste, TrainMode::Centralized);
  const double acc_ste = evaluate_accuracy(quantized, hard.params, data.eval_features, data.eval_labels);

  CHECK(acc_plain > 0.5);  // the synthetic task is learnable
  CHECK(std::abs(acc_plain - acc_ste) <= 0.08);
  MESSAGE("unquantized ", acc_plain, " vs straight-through q=4 ", acc_ste);
}

TEST_CASE("divergence aborts with a partial history") {
  SplitTopology topo = fc_topology(1, std::nullopt);
  SplitDataset data = random_dataset(topo, 64, 16, 11);
  TrainConfig cfg;
  // the regularizer update multiplies every weight by (1 - 2*lambda*lr) each
  // step; this setting overflows the L2 term within a few steps
  cfg.lr = 1e40;
  cfg.lambda = 1e40;
  cfg.epochs = 5;
  cfg.batch = 16;
  cfg.optimizer = Optimizer::Sgd;
  TrainResult r = train(topo, data, cfg, TrainMode::Centralized);
  CHECK(r.diverged);
  CHECK(r.history.size() < 5);
}

TEST_CASE("protocol traces export as delimited text and reject malformed shapes") {
  ProtocolTrace trace;
  trace.messages.push_back({0, true, 1, Message::Role::Code, 32, 1024});
  trace.messages.push_back({0, true, 2, Message::Role::Code, 32, 1024});
  trace.messages.push_back({0, false, 1, Message::Role::DownstreamGrad, 32, 1024});
  trace.messages.push_back({0, false, 2, Message::Role::DownstreamGrad, 32, 1024});
  trace.validate(2);
  std::ostringstream os;
  trace.write_tsv(os);
  CHECK(os.str() ==
        "round\tdirection\tnode\trole\tvalues\tbits\n"
        "0\tuplink\t1\tcode\t32\t1024\n"
        "0\tuplink\t2\tcode\t32\t1024\n"
        "0\tdownlink\t1\tdownstream-gradient\t32\t1024\n"
        "0\tdownlink\t2\tdownstream-gradient\t32\t1024\n");

  ProtocolTrace missing = trace;
  missing.messages.pop_back();
  CHECK_THROWS_AS(missing.validate(2), ProtocolError);
  ProtocolTrace reordered = trace;
  std::swap(reordered.messages[0], reordered.messages[2]);
  CHECK_THROWS_AS(reordered.validate(2), ProtocolError);
}
