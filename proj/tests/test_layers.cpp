#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "splitnn/layers.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/topology.hpp"

using namespace splitnn;

namespace {

Tensor rnd(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("a fat weight matrix makes the layer a compression") {
  FullyConnectedSpec spec{4, 2, Activation::Sigmoid};
  CHECK(spec.is_compression());
  Rng rng(1);
  Tensor out = fc_forward(spec, rnd({2, 4}, rng), rnd({2}, rng), rnd({3, 4}, rng));
  CHECK(out.shape == std::vector<int64_t>{3, 2});  // strictly smaller than the input
  CHECK_FALSE(FullyConnectedSpec{2, 4, Activation::Sigmoid}.is_compression());  // expansion
}

TEST_CASE("identity weights with identity activation reproduce the input") {
  FullyConnectedSpec spec{3, 3, Activation::Identity};
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(2);
  Tensor x = rnd({4, 3}, rng);
  Tensor out = fc_forward(spec, eye, Tensor({3}), x);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]));
}

TEST_CASE("zero weights and bias under sigmoid give one half everywhere") {
  FullyConnectedSpec spec{5, 3, Activation::Sigmoid};
  Tensor out = fc_forward(spec, Tensor({3, 5}), Tensor({3}), Tensor({2, 5}, std::vector<double>(10, 0.7)));
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.5);
}

TEST_CASE("conv stack shape arithmetic: 14x14 input, 32 5x5 filters, 2x2 pool") {
  Conv2DSpec spec{14, 14, 1, 32, 5, 5, Activation::Relu, true};
  Rng rng(3);
  Tensor out = conv_pool_forward(spec, rnd({32, 5, 5, 1}, rng), rnd({32}, rng), rnd({2, 14, 14, 1}, rng));
  CHECK(out.shape == std::vector<int64_t>{2, 7, 7, 32});
}

TEST_CASE("a centered delta kernel with identity activation and no pooling is the identity") {
  Conv2DSpec spec{6, 6, 1, 1, 3, 3, Activation::Identity, false};
  Tensor w({1, 3, 3, 1});
  w[4] = 1.0;  // center tap
  Rng rng(4);
  Tensor x = rnd({3, 6, 6, 1}, rng);
  Tensor out = conv_pool_forward(spec, w, Tensor({1}), x);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("an all-zero image with bias under relu saturates at max(bias, 0)") {
  Conv2DSpec spec{4, 4, 1, 2, 3, 3, Activation::Relu, false};
  Tensor b({2}, {0.7, -0.3});
  Tensor out = conv_pool_forward(spec, Tensor({2, 3, 3, 1}), b, Tensor({1, 4, 4, 1}));
  for (int64_t i = 0; i < 16; ++i) {
    CHECK(out[i * 2 + 0] == 0.7);
    CHECK(out[i * 2 + 1] == 0.0);
  }
}

TEST_CASE("pooling rejects odd spatial dimensions") {
  Graph g;
  int x = g.input("x", {1, 7, 8, 1});
  Conv2DSpec spec{7, 8, 1, 4, 3, 3, Activation::Relu, true};
  CHECK_THROWS_WITH_AS(append_conv(g, x, spec, "c"), doctest::Contains("even"), GraphError);
}

TEST_CASE("lstm with zero parameters emits a zero final state") {
  LstmSpec spec{2, 3};
  LstmParams p;
  for (int gate = 0; gate < 4; ++gate) {
    p.wx[static_cast<size_t>(gate)] = Tensor({3, 2});
    p.wh[static_cast<size_t>(gate)] = Tensor({3, 3});
    p.b[static_cast<size_t>(gate)] = Tensor({3});
  }
  Rng rng(5);
  Tensor out = lstm_forward(spec, p, rnd({4, 6, 2}, rng));
  CHECK(out.shape == std::vector<int64_t>{4, 3});
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);  // o=0.5, tanh(c)=0
}

TEST_CASE("lstm over a 50-step scalar series with 40 states emits 40 values") {
  LstmSpec spec{1, 40};
  Rng rng(6);
  LstmParams p;
  for (int gate = 0; gate < 4; ++gate) {
    p.wx[static_cast<size_t>(gate)] = rnd({40, 1}, rng, -0.5, 0.5);
    p.wh[static_cast<size_t>(gate)] = rnd({40, 40}, rng, -0.2, 0.2);
    p.b[static_cast<size_t>(gate)] = Tensor({40});
  }
  Tensor out = lstm_forward(spec, p, rnd({50, 1}, rng));
  CHECK(out.shape == std::vector<int64_t>{1, 40});
  CHECK(out.all_finite());
}

TEST_CASE("lstm gradients pass the finite-difference oracle") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    Graph g;
    int series = g.input("series", {2, 5, 2}, true);
    int h = append_lstm(g, series, LstmSpec{2, 3}, "lstm");
    int mixer = g.input("mix", {2, 3});
    g.set_output(g.sum(g.mul(h, mixer)));
    g.bind("series", rnd({2, 5, 2}, rng));
    g.bind("mix", rnd({2, 3}, rng));
    ModelParams dummy;
    for (const auto& decl : layer_param_decls(LstmSpec{2, 3}, "lstm")) {
      Tensor t(decl.shape);
      init_tensor(t, decl.init, rng);
      g.bind(decl.name, t);
    }
    auto rep = g.grad_check(1e-5, 1e-4);
    CHECK(rep.pass);
  }
}

TEST_CASE("stacked lstm consumes the full hidden sequence") {
  Rng rng(9);
  Graph g;
  int series = g.input("series", {3, 6, 1});
  int h1 = append_lstm(g, series, LstmSpec{1, 4}, "l1", /*return_sequence=*/true);
  CHECK(g.node(h1).out_shape == std::vector<int64_t>{3, 6, 4});
  int h2 = append_lstm(g, h1, LstmSpec{4, 2}, "l2");
  CHECK(g.node(h2).out_shape == std::vector<int64_t>{3, 2});
  g.set_output(g.sum(h2));
  g.bind("series", rnd({3, 6, 1}, rng));
  for (const auto& layer : {std::pair{LstmSpec{1, 4}, "l1"}, std::pair{LstmSpec{4, 2}, "l2"}})
    for (const auto& decl : layer_param_decls(layer.first, layer.second)) {
      Tensor t(decl.shape);
      init_tensor(t, decl.init, rng);
      g.bind(decl.name, t);
    }
  CHECK(g.forward().all_finite());
}

TEST_CASE("an empty series cannot be constructed") {
  CHECK_THROWS_AS(Tensor({4, 0, 2}), std::invalid_argument);
}

TEST_CASE("quantizer worked examples") {
  // q=1 over [0,1]: 0.7 -> level 1, bin center 0.75
  {
    QuantizerSpec spec{1, 0.0, 1.0};
    auto r = quantize(spec, Tensor({1}, {0.7}));
    CHECK(r.levels[0] == 1);
    CHECK(r.dequantized[0] == doctest::Approx(0.75));
  }
  // q=2 over [0,1]: 0.7 -> level 2, bin center 0.625
  {
    QuantizerSpec spec{2, 0.0, 1.0};
    auto r = quantize(spec, Tensor({1}, {0.7}));
    CHECK(r.levels[0] == 2);
    CHECK(r.dequantized[0] == doctest::Approx(0.625));
  }
  // the top of the range lands in the last bin at any q
  for (int q = 1; q <= 8; ++q) {
    QuantizerSpec spec{q, 0.0, 1.0};
    CHECK(spec.level_of(1.0) == (1 << q) - 1);
    CHECK(spec.level_of(5.0) == (1 << q) - 1);  // clipped
  }
}

TEST_CASE("quantizer error bound, monotonicity and idempotence") {
  for (const auto& range : {std::pair{0.0, 1.0}, std::pair{-1.0, 1.0}}) {
    for (int q = 1; q <= 4; ++q) {
      QuantizerSpec spec{q, range.first, range.second};
      const double width = range.second - range.first;
      const double bound = width / std::pow(2.0, q + 1);
      int32_t prev = 0;
      for (int i = 0; i <= 2000; ++i) {
        const double x = range.first - 0.3 * width + 1.6 * width * i / 2000.0;
        const int32_t lv = spec.level_of(x);
        const double deq = spec.value_of(lv);
        CHECK(std::abs(deq - std::clamp(x, range.first, range.second)) <= bound + 1e-15);
        if (i > 0) CHECK(lv >= prev);          // monotone
        CHECK(spec.level_of(deq) == lv);       // quantize . dequantize . quantize == quantize
        prev = lv;
      }
    }
  }
}

TEST_CASE("dequantize validates the level count") {
  QuantizerSpec spec{2, 0.0, 1.0};
  CHECK_THROWS_AS(dequantize(spec, {1, 2, 3}, {2, 2}), std::invalid_argument);
}

TEST_CASE("node stack for C=64 yields 16 sigmoid outputs in [0,1]") {
  SplitTopology topo = image_split_topology(64, std::nullopt);
  CHECK(topo.code_dim(0) == 16);
  Graph g;
  int x = g.input("x", {2, 14, 14, 1});
  int cur = x;
  size_t li = 0;
  for (const auto& layer : topo.nodes[0].layers)
    cur = append_layer(g, cur, layer, "node1/l" + std::to_string(++li), false);
  g.set_output(cur);
  Rng rng(12);
  g.bind("x", rnd({2, 14, 14, 1}, rng, 0.0, 1.0));
  ModelParams params = init_params(topo, 7);
  for (const auto& [name, t] : params.owners[1]) g.bind(name, t);
  const Tensor& code = g.forward();
  CHECK(code.shape == std::vector<int64_t>{2, 16});
  for (int64_t i = 0; i < code.size(); ++i) {
    CHECK(code[i] >= 0.0);
    CHECK(code[i] <= 1.0);
  }
}

TEST_CASE("layer parameter declarations carry the right shapes and counts") {
  CHECK(layer_param_count(FullyConnectedSpec{1568, 16, Activation::Sigmoid}) == 1568 * 16 + 16);
  CHECK(layer_param_count(Conv2DSpec{14, 14, 1, 32, 5, 5, Activation::Relu, true}) == 32 * 5 * 5 + 32);
  // 4 gates x (Wx + Wh + b)
  CHECK(layer_param_count(LstmSpec{1, 40}) == 4 * (40 * 1 + 40 * 40 + 40));

  Rng rng(1);
  for (const auto& decl : layer_param_decls(LstmSpec{2, 3}, "p")) {
    Tensor t(decl.shape);
    init_tensor(t, decl.init, rng);
    if (decl.name == "p/bf")
      for (double v : t.data) CHECK(v == 1.0);  // forget-gate bias starts open
  }
}
