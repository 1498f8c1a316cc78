#include "splitnn/topology.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "splitnn/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint arrays are little-endian; big-endian hosts need byte swapping");

namespace splitnn {

int64_t NodeStack::output_dim() const {
  if (layers.empty()) throw std::invalid_argument("empty layer stack");
  return layer_output_dim(layers.back());
}

int64_t NodeStack::param_count() const {
  int64_t n = 0;
  for (const auto& l : layers) n += layer_param_count(l);
  return n;
}

int64_t SplitTopology::total_code_dim() const {
  int64_t c = 0;
  for (const auto& n : nodes) c += n.output_dim();
  return c;
}

int64_t SplitTopology::total_feature_dim() const {
  int64_t d = 0;
  for (const auto& n : nodes) d += n.input_dim();
  return d;
}

namespace {

void validate_stack(const NodeStack& s, const std::string& what) {
  if (s.layers.empty()) throw std::invalid_argument(what + ": no layers");
  // first layer vs declared input shape
  const LayerSpec& first = s.layers.front();
  if (const auto* cv = std::get_if<Conv2DSpec>(&first)) {
    if (s.input_shape != std::vector<int64_t>{cv->in_h, cv->in_w, cv->in_ch})
      throw std::invalid_argument(what + ": conv input " + shape_str(s.input_shape) + " does not match spec");
  } else if (const auto* ls = std::get_if<LstmSpec>(&first)) {
    if (s.input_shape.size() != 2 || s.input_shape[1] != ls->input_dim)
      throw std::invalid_argument(what + ": lstm input " + shape_str(s.input_shape) +
                                  " must be (window, input_dim)");
  } else {
    if (Tensor::numel(s.input_shape) != layer_input_dim(first))
      throw std::invalid_argument(what + ": input " + shape_str(s.input_shape) + " does not provide " +
                                  std::to_string(layer_input_dim(first)) + " features");
  }
  // transitions
  for (size_t i = 1; i < s.layers.size(); ++i) {
    if (std::holds_alternative<Conv2DSpec>(s.layers[i]))
      throw std::invalid_argument(what + ": convolution is only supported as the first layer");
    int64_t need = layer_input_dim(s.layers[i]);
    int64_t have = layer_output_dim(s.layers[i - 1]);
    if (std::holds_alternative<LstmSpec>(s.layers[i])) {
      if (!std::holds_alternative<LstmSpec>(s.layers[i - 1]))
        throw std::invalid_argument(what + ": an lstm layer can only follow another lstm layer");
      have = std::get<LstmSpec>(s.layers[i - 1]).state_dim;
    }
    if (need != have)
      throw std::invalid_argument(what + ": layer " + std::to_string(i + 1) + " expects " +
                                  std::to_string(need) + " inputs, previous layer provides " +
                                  std::to_string(have));
  }
}

}  // namespace

void SplitTopology::validate() const {
  if (nodes.empty()) throw std::invalid_argument("topology: no nodes");
  if (num_classes < 2) throw std::invalid_argument("topology: need at least 2 classes");
  for (size_t i = 0; i < nodes.size(); ++i) validate_stack(nodes[i], "node" + std::to_string(i + 1));
  validate_stack(aggregator, "aggregator");
  if (Tensor::numel(aggregator.input_shape) != total_code_dim())
    throw std::invalid_argument("topology: aggregator input dim " +
                                std::to_string(Tensor::numel(aggregator.input_shape)) +
                                " != total code dim " + std::to_string(total_code_dim()));
  if (aggregator.output_dim() != num_classes)
    throw std::invalid_argument("topology: aggregator emits " + std::to_string(aggregator.output_dim()) +
                                " scores for " + std::to_string(num_classes) + " classes");
  if (quantizer) {
    if (quantizer->bits < 1 || quantizer->bits > 30)
      throw std::invalid_argument("topology: quantizer bits out of range");
    if (!(quantizer->hi > quantizer->lo)) throw std::invalid_argument("topology: quantizer range empty");
  }
}

int64_t ModelParams::count(int owner) const {
  int64_t n = 0;
  for (const auto& [name, t] : owners[static_cast<size_t>(owner)]) n += t.size();
  return n;
}

int64_t ModelParams::total_count() const {
  int64_t n = 0;
  for (size_t o = 0; o < owners.size(); ++o) n += count(static_cast<int>(o));
  return n;
}

std::vector<double> ModelParams::flat(int owner) const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(count(owner)));
  for (const auto& [name, t] : owners[static_cast<size_t>(owner)])
    out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

void ModelParams::load_flat(int owner, const std::vector<double>& flat) {
  size_t off = 0;
  for (auto& [name, t] : owners[static_cast<size_t>(owner)]) {
    if (off + t.data.size() > flat.size())
      throw std::invalid_argument("flat parameter array too short for owner " + std::to_string(owner));
    std::copy(flat.begin() + static_cast<ptrdiff_t>(off),
              flat.begin() + static_cast<ptrdiff_t>(off + t.data.size()), t.data.begin());
    off += t.data.size();
  }
  if (off != flat.size())
    throw std::invalid_argument("flat parameter array length " + std::to_string(flat.size()) +
                                " does not match owner " + std::to_string(owner) + " (" +
                                std::to_string(off) + " expected)");
}

std::string owner_prefix(int owner) { return owner == 0 ? "agg" : "node" + std::to_string(owner); }

std::vector<ParamDecl> stack_param_decls(const NodeStack& s, const std::string& prefix) {
  std::vector<ParamDecl> decls;
  for (size_t i = 0; i < s.layers.size(); ++i) {
    auto layer_decls = layer_param_decls(s.layers[i], prefix + "/l" + std::to_string(i + 1));
    decls.insert(decls.end(), layer_decls.begin(), layer_decls.end());
  }
  return decls;
}

void init_tensor(Tensor& t, const ParamInit& init, Rng& rng) {
  switch (init.kind) {
    case ParamInit::Kind::UniformFanIn: {
      const double s = 1.0 / std::sqrt(static_cast<double>(init.fan_in));
      for (double& v : t.data) v = rng.uniform(-s, s);
      break;
    }
    case ParamInit::Kind::Zero:
      t.fill(0.0);
      break;
    case ParamInit::Kind::One:
      t.fill(1.0);
      break;
  }
}

ModelParams init_params(const SplitTopology& topo, uint64_t seed) {
  topo.validate();
  ModelParams p;
  p.owners.resize(static_cast<size_t>(topo.num_nodes()) + 1);
  for (int owner = 0; owner <= topo.num_nodes(); ++owner) {
    const NodeStack& stack = owner == 0 ? topo.aggregator : topo.nodes[static_cast<size_t>(owner - 1)];
    Rng rng(derive_seed(seed, static_cast<uint64_t>(owner)));
    for (const auto& decl : stack_param_decls(stack, owner_prefix(owner))) {
      Tensor t(decl.shape);
      init_tensor(t, decl.init, rng);
      p.owners[static_cast<size_t>(owner)].emplace(decl.name, std::move(t));
    }
  }
  return p;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string layer_to_text(const LayerSpec& l) {
  std::ostringstream os;
  if (const auto* fc = std::get_if<FullyConnectedSpec>(&l)) {
    os << "fc " << fc->in_dim << ' ' << fc->out_dim << ' ' << to_string(fc->act);
  } else if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
    os << "conv2d " << cv->in_h << ' ' << cv->in_w << ' ' << cv->in_ch << ' ' << cv->filters << ' ' << cv->kh
       << ' ' << cv->kw << ' ' << to_string(cv->act) << ' ' << (cv->pool ? "pool" : "nopool");
  } else {
    const auto& ls = std::get<LstmSpec>(l);
    os << "lstm " << ls.input_dim << ' ' << ls.state_dim;
  }
  return os.str();
}

LayerSpec layer_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  if (kind == "fc") {
    FullyConnectedSpec fc;
    std::string act;
    is >> fc.in_dim >> fc.out_dim >> act;
    if (!is) throw std::invalid_argument("bad fc layer: " + text);
    fc.act = activation_from_string(act);
    return fc;
  }
  if (kind == "conv2d") {
    Conv2DSpec cv;
    std::string act, pool;
    is >> cv.in_h >> cv.in_w >> cv.in_ch >> cv.filters >> cv.kh >> cv.kw >> act >> pool;
    if (!is || (pool != "pool" && pool != "nopool")) throw std::invalid_argument("bad conv2d layer: " + text);
    cv.act = activation_from_string(act);
    cv.pool = pool == "pool";
    return cv;
  }
  if (kind == "lstm") {
    LstmSpec ls;
    is >> ls.input_dim >> ls.state_dim;
    if (!is) throw std::invalid_argument("bad lstm layer: " + text);
    return ls;
  }
  throw std::invalid_argument("unknown layer kind in '" + text + "'");
}

void stack_to_text(std::ostringstream& os, const NodeStack& s, const std::string& key) {
  os << key << ".input =";
  for (int64_t d : s.input_shape) os << ' ' << d;
  os << '\n';
  for (size_t i = 0; i < s.layers.size(); ++i)
    os << key << ".layer" << (i + 1) << " = " << layer_to_text(s.layers[i]) << '\n';
}

}  // namespace

std::string topology_to_text(const SplitTopology& topo) {
  std::ostringstream os;
  os << "format = splitnn-topology-v1\n";
  os << "classes = " << topo.num_classes << '\n';
  os << "nodes = " << topo.num_nodes() << '\n';
  if (topo.quantizer)
    os << "quantizer = " << topo.quantizer->bits << ' ' << fmt_double(topo.quantizer->lo) << ' '
       << fmt_double(topo.quantizer->hi) << '\n';
  else
    os << "quantizer = none\n";
  for (int i = 0; i < topo.num_nodes(); ++i)
    stack_to_text(os, topo.nodes[static_cast<size_t>(i)], "node" + std::to_string(i + 1));
  stack_to_text(os, topo.aggregator, "agg");
  return os.str();
}

namespace {

std::map<std::string, std::string> parse_kv_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("manifest line without '=': " + line);
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      auto last = s.find_last_not_of(ws);
      s.erase(last == std::string::npos ? 0 : last + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

NodeStack stack_from_kv(const std::map<std::string, std::string>& kv, const std::string& key) {
  NodeStack s;
  auto it = kv.find(key + ".input");
  if (it == kv.end()) throw std::invalid_argument("manifest missing " + key + ".input");
  std::istringstream is(it->second);
  int64_t d;
  while (is >> d) s.input_shape.push_back(d);
  for (size_t i = 1;; ++i) {
    auto lit = kv.find(key + ".layer" + std::to_string(i));
    if (lit == kv.end()) break;
    s.layers.push_back(layer_from_text(lit->second));
  }
  return s;
}

}  // namespace

SplitTopology topology_from_text(const std::string& text) {
  auto kv = parse_kv_lines(text);
  if (kv["format"] != "splitnn-topology-v1")
    throw std::invalid_argument("unknown topology format '" + kv["format"] + "'");
  SplitTopology topo;
  topo.num_classes = std::stoll(kv.at("classes"));
  const int n = static_cast<int>(std::stoll(kv.at("nodes")));
  const std::string q = kv.at("quantizer");
  if (q != "none") {
    QuantizerSpec spec;
    std::istringstream is(q);
    if (!(is >> spec.bits >> spec.lo >> spec.hi)) throw std::invalid_argument("bad quantizer line: " + q);
    topo.quantizer = spec;
  }
  for (int i = 1; i <= n; ++i) topo.nodes.push_back(stack_from_kv(kv, "node" + std::to_string(i)));
  topo.aggregator = stack_from_kv(kv, "agg");
  topo.validate();
  return topo;
}

void save_checkpoint(const SplitTopology& topo, const ModelParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  f << "checkpoint = splitnn-checkpoint-v1\n" << topology_to_text(topo);
  for (size_t o = 0; o < params.owners.size(); ++o)
    f << "params.owner" << o << " = " << params.count(static_cast<int>(o)) << '\n';
  f << "---\n";
  for (size_t o = 0; o < params.owners.size(); ++o) {
    auto flat = params.flat(static_cast<int>(o));
    f.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * 8));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

std::pair<SplitTopology, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::string manifest, line;
  while (std::getline(f, line)) {
    if (line == "---") break;
    manifest += line;
    manifest += '\n';
  }
  if (line != "---") throw std::runtime_error("checkpoint missing '---' separator: " + path);
  auto kv = parse_kv_lines(manifest);
  if (kv["checkpoint"] != "splitnn-checkpoint-v1")
    throw std::runtime_error("unknown checkpoint format in " + path);
  SplitTopology topo = topology_from_text(manifest);

  ModelParams params = init_params(topo, 0);
  for (int o = 0; o <= topo.num_nodes(); ++o) {
    auto it = kv.find("params.owner" + std::to_string(o));
    if (it == kv.end()) throw std::runtime_error("checkpoint missing params.owner" + std::to_string(o));
    const int64_t declared = std::stoll(it->second);
    const int64_t expected = params.count(o);
    if (declared != expected)
      throw std::runtime_error("checkpoint owner " + std::to_string(o) + " declares " + it->second +
                               " parameters, topology requires " + std::to_string(expected));
    std::vector<double> flat(static_cast<size_t>(declared));
    f.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * 8));
    if (f.gcount() != static_cast<std::streamsize>(flat.size() * 8))
      throw std::runtime_error("checkpoint truncated while reading owner " + std::to_string(o));
    params.load_flat(o, flat);
  }
  return {std::move(topo), std::move(params)};
}

SplitTopology image_split_topology(int64_t C, std::optional<int> q_bits, int image_side, int nodes, int classes) {
  if (nodes != 4) throw std::invalid_argument("image split uses 4 quadrant nodes");
  if (image_side % 4 != 0) throw std::invalid_argument("image side must be divisible by 4");
  if (C % nodes != 0 || C < nodes) throw std::invalid_argument("C must be a positive multiple of the node count");
  const int64_t half = image_side / 2;
  const int64_t conv_out = (half / 2) * (half / 2) * 32;
  SplitTopology topo;
  for (int i = 0; i < nodes; ++i) {
    NodeStack s;
    s.input_shape = {half, half, 1};
    s.layers.push_back(Conv2DSpec{half, half, 1, 32, 5, 5, Activation::Relu, true});
    s.layers.push_back(FullyConnectedSpec{conv_out, C / nodes, Activation::Sigmoid});
    topo.nodes.push_back(std::move(s));
  }
  if (q_bits) topo.quantizer = QuantizerSpec{*q_bits, 0.0, 1.0};
  topo.aggregator.input_shape = {C};
  topo.aggregator.layers.push_back(FullyConnectedSpec{C, 1024, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{1024, classes, Activation::Identity});
  topo.num_classes = classes;
  topo.validate();
  return topo;
}

SplitTopology image_centralized_topology(int image_side, int classes) {
  const int64_t side = image_side;
  const int64_t conv_out = (side / 2) * (side / 2) * 32;
  SplitTopology topo;
  NodeStack s;
  s.input_shape = {side, side, 1};
  s.layers.push_back(Conv2DSpec{side, side, 1, 32, 5, 5, Activation::Relu, true});
  topo.nodes.push_back(std::move(s));
  topo.aggregator.input_shape = {conv_out};
  topo.aggregator.layers.push_back(FullyConnectedSpec{conv_out, 1024, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{1024, classes, Activation::Identity});
  topo.num_classes = classes;
  topo.validate();
  return topo;
}

SplitTopology series_split_topology(std::optional<int> q_bits, int window, int nodes, int classes) {
  SplitTopology topo;
  for (int i = 0; i < nodes; ++i) {
    NodeStack s;
    s.input_shape = {window, 1};
    s.layers.push_back(LstmSpec{1, 40});
    s.layers.push_back(LstmSpec{40, 9});
    topo.nodes.push_back(std::move(s));
  }
  // the code is an LSTM hidden state, so its natural range is (-1,1)
  if (q_bits) topo.quantizer = QuantizerSpec{*q_bits, -1.0, 1.0};
  const int64_t c = 9 * nodes;
  topo.aggregator.input_shape = {c};
  topo.aggregator.layers.push_back(FullyConnectedSpec{c, 20, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{20, classes, Activation::Identity});
  topo.num_classes = classes;
  topo.validate();
  return topo;
}

SplitTopology series_centralized_topology(int window, int channels, int classes) {
  SplitTopology topo;
  NodeStack s;
  s.input_shape = {window, channels};
  s.layers.push_back(LstmSpec{channels, 40});
  s.layers.push_back(LstmSpec{40, 9});
  topo.nodes.push_back(std::move(s));
  topo.aggregator.input_shape = {9};
  topo.aggregator.layers.push_back(FullyConnectedSpec{9, 20, Activation::Relu});
  topo.aggregator.layers.push_back(FullyConnectedSpec{20, classes, Activation::Identity});
  topo.num_classes = classes;
  topo.validate();
  return topo;
}

}  // namespace splitnn
