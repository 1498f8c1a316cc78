#include "splitnn/layers.hpp"

#include <stdexcept>

namespace splitnn {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

namespace {

const char* kGateNames[4] = {"i", "f", "g", "o"};

struct DimVisitor {
  int64_t operator()(const FullyConnectedSpec& s) const { return s.in_dim; }
  int64_t operator()(const Conv2DSpec& s) const { return s.in_h * s.in_w * s.in_ch; }
  int64_t operator()(const LstmSpec& s) const { return s.input_dim; }  // per step
};

struct OutVisitor {
  int64_t operator()(const FullyConnectedSpec& s) const { return s.out_dim; }
  int64_t operator()(const Conv2DSpec& s) const {
    const int64_t h = s.pool ? s.in_h / 2 : s.in_h;
    const int64_t w = s.pool ? s.in_w / 2 : s.in_w;
    return h * w * s.filters;
  }
  int64_t operator()(const LstmSpec& s) const { return s.state_dim; }
};

}  // namespace

int64_t layer_input_dim(const LayerSpec& l) { return std::visit(DimVisitor{}, l); }
int64_t layer_output_dim(const LayerSpec& l) { return std::visit(OutVisitor{}, l); }

int64_t layer_param_count(const LayerSpec& l) {
  int64_t n = 0;
  for (const auto& d : layer_param_decls(l, "p")) n += Tensor::numel(d.shape);
  return n;
}

std::vector<ParamDecl> layer_param_decls(const LayerSpec& layer, const std::string& prefix) {
  std::vector<ParamDecl> decls;
  if (const auto* fc = std::get_if<FullyConnectedSpec>(&layer)) {
    decls.push_back({prefix + "/W", {fc->out_dim, fc->in_dim}, {ParamInit::Kind::UniformFanIn, fc->in_dim}});
    decls.push_back({prefix + "/b", {fc->out_dim}, {ParamInit::Kind::Zero, 0}});
  } else if (const auto* cv = std::get_if<Conv2DSpec>(&layer)) {
    decls.push_back({prefix + "/W",
                     {cv->filters, cv->kh, cv->kw, cv->in_ch},
                     {ParamInit::Kind::UniformFanIn, cv->kh * cv->kw * cv->in_ch}});
    decls.push_back({prefix + "/b", {cv->filters}, {ParamInit::Kind::Zero, 0}});
  } else if (const auto* ls = std::get_if<LstmSpec>(&layer)) {
    for (int gate = 0; gate < 4; ++gate) {
      decls.push_back({prefix + "/Wx" + kGateNames[gate],
                       {ls->state_dim, ls->input_dim},
                       {ParamInit::Kind::UniformFanIn, ls->input_dim}});
      decls.push_back({prefix + "/Wh" + kGateNames[gate],
                       {ls->state_dim, ls->state_dim},
                       {ParamInit::Kind::UniformFanIn, ls->state_dim}});
      // forget-gate bias starts at one, the rest at zero
      decls.push_back({prefix + "/b" + kGateNames[gate],
                       {ls->state_dim},
                       {gate == 1 ? ParamInit::Kind::One : ParamInit::Kind::Zero, 0}});
    }
  }
  return decls;
}

int append_activation(Graph& g, int x, Activation act) {
  switch (act) {
    case Activation::Sigmoid: return g.sigmoid(x);
    case Activation::Relu: return g.relu(x);
    case Activation::Tanh: return g.tanh_(x);
    case Activation::Identity: return x;
  }
  return x;
}

int append_fc(Graph& g, int x, const FullyConnectedSpec& spec, const std::string& prefix) {
  if (g.node(x).out_shape.size() != 2 || g.node(x).out_shape[1] != spec.in_dim)
    throw GraphError("fc '" + prefix + "': input " + shape_str(g.node(x).out_shape) + " does not provide in_dim " +
                     std::to_string(spec.in_dim));
  int w = g.param(prefix + "/W", {spec.out_dim, spec.in_dim});
  int b = g.param(prefix + "/b", {spec.out_dim});
  return append_activation(g, g.add_row(g.matmul_nt(x, w), b), spec.act);
}

int append_conv(Graph& g, int x, const Conv2DSpec& spec, const std::string& prefix) {
  const auto& s = g.node(x).out_shape;
  if (s.size() != 4 || s[1] != spec.in_h || s[2] != spec.in_w || s[3] != spec.in_ch)
    throw GraphError("conv '" + prefix + "': input " + shape_str(s) + " does not match spec " +
                     std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w) + "x" +
                     std::to_string(spec.in_ch));
  if (spec.pool && (spec.in_h % 2 != 0 || spec.in_w % 2 != 0))
    throw GraphError("conv '" + prefix + "': 2x2 pooling requires even spatial dimensions, got " + shape_str(s));
  int w = g.param(prefix + "/W", {spec.filters, spec.kh, spec.kw, spec.in_ch});
  int b = g.param(prefix + "/b", {spec.filters});
  int y = append_activation(g, g.conv2d_same(x, w, b), spec.act);
  if (spec.pool) y = g.maxpool2(y);
  return y;
}

int append_lstm(Graph& g, int series, const LstmSpec& spec, const std::string& prefix, bool return_sequence) {
  const auto& s = g.node(series).out_shape;
  if (s.size() != 3 || s[2] != spec.input_dim)
    throw GraphError("lstm '" + prefix + "': input " + shape_str(s) + " does not match input_dim " +
                     std::to_string(spec.input_dim));
  const int64_t m = s[0], window = s[1];
  int wx[4], wh[4], b[4];
  for (int gate = 0; gate < 4; ++gate) {
    wx[gate] = g.param(prefix + "/Wx" + kGateNames[gate], {spec.state_dim, spec.input_dim});
    wh[gate] = g.param(prefix + "/Wh" + kGateNames[gate], {spec.state_dim, spec.state_dim});
    b[gate] = g.param(prefix + "/b" + kGateNames[gate], {spec.state_dim});
  }
  int h = g.constant(Tensor({m, spec.state_dim}));
  int c = g.constant(Tensor({m, spec.state_dim}));
  std::vector<int> hs;
  for (int64_t t = 0; t < window; ++t) {
    int xt = g.slice_time(series, static_cast<int>(t));
    auto gate_pre = [&](int gate) {
      return g.add_row(g.add(g.matmul_nt(xt, wx[gate]), g.matmul_nt(h, wh[gate])), b[gate]);
    };
    int gi = g.sigmoid(gate_pre(0));
    int gf = g.sigmoid(gate_pre(1));
    int gg = g.tanh_(gate_pre(2));
    int go = g.sigmoid(gate_pre(3));
    c = g.add(g.mul(gf, c), g.mul(gi, gg));
    h = g.mul(go, g.tanh_(c));
    if (return_sequence) hs.push_back(h);
  }
  return return_sequence ? g.stack_time(hs) : h;
}

int append_layer(Graph& g, int x, const LayerSpec& spec, const std::string& prefix, bool lstm_return_sequence) {
  if (const auto* fc = std::get_if<FullyConnectedSpec>(&spec)) {
    // flatten anything rank>2 into (m, features) first
    if (g.node(x).out_shape.size() > 2) {
      const auto& s = g.node(x).out_shape;
      x = g.reshape(x, {s[0], Tensor::numel(s) / s[0]});
    }
    return append_fc(g, x, *fc, prefix);
  }
  if (const auto* cv = std::get_if<Conv2DSpec>(&spec)) return append_conv(g, x, *cv, prefix);
  return append_lstm(g, x, std::get<LstmSpec>(spec), prefix, lstm_return_sequence);
}

namespace {

// Evaluate a single layer by building a throwaway graph around it.
Tensor run_layer(const LayerSpec& spec, const std::vector<std::pair<std::string, const Tensor*>>& params,
                 const Tensor& x, std::vector<int64_t> input_shape) {
  Graph g;
  int in = g.input("x", std::move(input_shape));
  int out = append_layer(g, in, spec, "p");
  g.set_output(out);
  g.bind("x", x);
  for (const auto& [name, tensor] : params) g.bind(name, *tensor);
  return g.forward();
}

Tensor with_batch_dim(const Tensor& x, const std::vector<int64_t>& per_sample) {
  // accept either batched input or a single sample
  if (x.shape.size() == per_sample.size()) {
    std::vector<int64_t> batched{1};
    batched.insert(batched.end(), x.shape.begin(), x.shape.end());
    return Tensor(batched, x.data);
  }
  return x;
}

}  // namespace

Tensor fc_forward(const FullyConnectedSpec& spec, const Tensor& W, const Tensor& b, const Tensor& x) {
  Tensor xb = with_batch_dim(x, {spec.in_dim});
  return run_layer(spec, {{"p/W", &W}, {"p/b", &b}}, xb, {xb.shape[0], spec.in_dim});
}

Tensor conv_pool_forward(const Conv2DSpec& spec, const Tensor& W, const Tensor& b, const Tensor& image) {
  Tensor xb = with_batch_dim(image, {spec.in_h, spec.in_w, spec.in_ch});
  return run_layer(spec, {{"p/W", &W}, {"p/b", &b}}, xb, {xb.shape[0], spec.in_h, spec.in_w, spec.in_ch});
}

Tensor lstm_forward(const LstmSpec& spec, const LstmParams& p, const Tensor& series) {
  Tensor xb = with_batch_dim(series, {series.shape.size() >= 2 ? series.shape[series.shape.size() - 2] : 0,
                                      spec.input_dim});
  if (xb.shape.size() != 3 || xb.shape[2] != spec.input_dim)
    throw std::invalid_argument("lstm_forward: series must be (window, input_dim) or (m, window, input_dim)");
  std::vector<std::pair<std::string, const Tensor*>> params;
  for (int gate = 0; gate < 4; ++gate) {
    params.emplace_back("p/Wx" + std::string(kGateNames[gate]), &p.wx[static_cast<size_t>(gate)]);
    params.emplace_back("p/Wh" + std::string(kGateNames[gate]), &p.wh[static_cast<size_t>(gate)]);
    params.emplace_back("p/b" + std::string(kGateNames[gate]), &p.b[static_cast<size_t>(gate)]);
  }
  return run_layer(LstmSpec{spec}, params, xb, xb.shape);
}

QuantizeResult quantize(const QuantizerSpec& spec, const Tensor& x) {
  QuantizeResult r;
  r.levels.resize(x.data.size());
  r.dequantized = Tensor(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    r.levels[static_cast<size_t>(i)] = spec.level_of(x[i]);
    r.dequantized[i] = spec.value_of(r.levels[static_cast<size_t>(i)]);
  }
  return r;
}

Tensor dequantize(const QuantizerSpec& spec, const std::vector<int32_t>& levels, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  if (static_cast<int64_t>(levels.size()) != t.size())
    throw std::invalid_argument("dequantize: level count does not match shape");
  for (int64_t i = 0; i < t.size(); ++i) t[i] = spec.value_of(levels[static_cast<size_t>(i)]);
  return t;
}

}  // namespace splitnn
