#include "splitnn/split_model.hpp"

#include <set>
#include <stdexcept>

namespace splitnn {

std::vector<int64_t> batched_shape(const std::vector<int64_t>& per_sample, int64_t m) {
  std::vector<int64_t> s{m};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

Tensor labels_tensor(const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("empty label batch");
  Tensor t({static_cast<int64_t>(labels.size())});
  for (size_t i = 0; i < labels.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<double>(labels[i]);
  return t;
}

namespace {

// One compressor: stack, then the optional quantizer.
int append_node_stack(Graph& g, int x, const SplitTopology& topo, int node, QuantizerMode mode) {
  const NodeStack& stack = topo.nodes[static_cast<size_t>(node - 1)];
  int cur = x;
  const std::string prefix = owner_prefix(node);
  for (size_t i = 0; i < stack.layers.size(); ++i) {
    const bool seq = i + 1 < stack.layers.size() && std::holds_alternative<LstmSpec>(stack.layers[i + 1]);
    cur = append_layer(g, cur, stack.layers[i], prefix + "/l" + std::to_string(i + 1), seq);
  }
  // flatten to (m, code_dim) so codes concatenate uniformly
  if (g.node(cur).out_shape.size() > 2) {
    const auto& s = g.node(cur).out_shape;
    cur = g.reshape(cur, {s[0], Tensor::numel(s) / s[0]});
  }
  if (topo.quantizer && mode != QuantizerMode::Off)
    cur = g.quantize(cur, QuantizeAttrs{*topo.quantizer, mode == QuantizerMode::Ste});
  return cur;
}

int append_agg_stack(Graph& g, int codes, const SplitTopology& topo) {
  int cur = codes;
  for (size_t i = 0; i < topo.aggregator.layers.size(); ++i)
    cur = append_layer(g, cur, topo.aggregator.layers[i], "agg/l" + std::to_string(i + 1), false);
  return cur;
}

}  // namespace

void bind_params(Graph& g, const ModelParams& params) {
  for (const auto& owner : params.owners)
    for (const auto& [name, tensor] : owner) g.bind(name, tensor);
}

std::unique_ptr<SplitGraph> build_split_graph(const SplitTopology& topo, int64_t batch, QuantizerMode mode,
                                              double lambda) {
  topo.validate();
  auto sg = std::make_unique<SplitGraph>();
  Graph& g = sg->g;
  for (int node = 1; node <= topo.num_nodes(); ++node)
    sg->input_ids.push_back(
        g.input("x" + std::to_string(node), batched_shape(topo.nodes[static_cast<size_t>(node - 1)].input_shape, batch)));
  sg->labels_id = g.input("labels", {batch});
  for (int node = 1; node <= topo.num_nodes(); ++node)
    sg->code_ids.push_back(append_node_stack(g, sg->input_ids[static_cast<size_t>(node - 1)], topo, node, mode));
  sg->concat_id = topo.num_nodes() == 1 ? sg->code_ids[0] : g.concat(sg->code_ids);
  sg->logits_id = append_agg_stack(g, sg->concat_id, topo);
  sg->probs_id = g.softmax(sg->logits_id);
  sg->ce_id = g.softmax_xent(sg->logits_id, sg->labels_id);
  int loss = sg->ce_id;
  if (lambda != 0.0) {
    // aggregator first, then nodes, in parameter declaration order
    for (int owner = 0; owner <= topo.num_nodes(); ++owner) {
      const NodeStack& stack = owner == 0 ? topo.aggregator : topo.nodes[static_cast<size_t>(owner - 1)];
      for (const auto& decl : stack_param_decls(stack, owner_prefix(owner)))
        loss = g.add(loss, g.scale(g.square_sum(g.leaf(decl.name)), lambda));
    }
  }
  sg->loss_id = loss;
  g.set_output(sg->loss_id);
  return sg;
}

std::unique_ptr<NodeGraph> build_node_graph(const SplitTopology& topo, int node, int64_t batch,
                                            QuantizerMode mode) {
  if (node < 1 || node > topo.num_nodes())
    throw std::invalid_argument("unknown node id " + std::to_string(node));
  auto ng = std::make_unique<NodeGraph>();
  ng->input_id = ng->g.input("x" + std::to_string(node),
                             batched_shape(topo.nodes[static_cast<size_t>(node - 1)].input_shape, batch));
  ng->code_id = append_node_stack(ng->g, ng->input_id, topo, node, mode);
  ng->g.set_output(ng->code_id);
  return ng;
}

std::unique_ptr<AggGraph> build_agg_graph(const SplitTopology& topo, int64_t batch, double lambda) {
  auto ag = std::make_unique<AggGraph>();
  Graph& g = ag->g;
  for (int node = 1; node <= topo.num_nodes(); ++node)
    ag->code_input_ids.push_back(
        g.input("c" + std::to_string(node), {batch, topo.code_dim(node - 1)}, /*requires_grad=*/true));
  ag->labels_id = g.input("labels", {batch});
  int concat = topo.num_nodes() == 1 ? ag->code_input_ids[0] : g.concat(ag->code_input_ids);
  ag->logits_id = append_agg_stack(g, concat, topo);
  ag->probs_id = g.softmax(ag->logits_id);
  ag->ce_id = g.softmax_xent(ag->logits_id, ag->labels_id);
  int loss = ag->ce_id;
  if (lambda != 0.0)
    for (const auto& decl : stack_param_decls(topo.aggregator, owner_prefix(0)))
      loss = g.add(loss, g.scale(g.square_sum(g.leaf(decl.name)), lambda));
  ag->loss_id = loss;
  g.set_output(ag->loss_id);
  return ag;
}

Code node_compress(const SplitTopology& topo, const ModelParams& params, int node, const Tensor& x_i) {
  if (node < 1 || node > topo.num_nodes())
    throw std::invalid_argument("unknown node id " + std::to_string(node));
  const auto& per_sample = topo.nodes[static_cast<size_t>(node - 1)].input_shape;
  Tensor xb = x_i;
  if (xb.shape == per_sample) xb = Tensor(batched_shape(per_sample, 1), x_i.data);
  auto ng = build_node_graph(topo, node, xb.shape[0], QuantizerMode::Hard);
  ng->g.bind(ng->input_id, xb);
  for (const auto& [name, tensor] : params.owners[static_cast<size_t>(node)]) ng->g.bind(name, tensor);
  Code code;
  code.node = node;
  code.values = ng->g.forward();
  if (topo.quantizer) {
    code.levels = ng->g.node(ng->code_id).iaux;
    code.bits_per_value = topo.quantizer->bits;
  }
  return code;
}

Tensor aggregate_infer(const SplitTopology& topo, const ModelParams& params, const std::vector<Code>& codes) {
  if (static_cast<int>(codes.size()) != topo.num_nodes())
    throw std::invalid_argument("expected " + std::to_string(topo.num_nodes()) + " codes, got " +
                                std::to_string(codes.size()));
  std::set<int> seen;
  for (const auto& c : codes) {
    if (c.node < 1 || c.node > topo.num_nodes())
      throw std::invalid_argument("code from unknown node " + std::to_string(c.node));
    if (!seen.insert(c.node).second)
      throw std::invalid_argument("duplicate code from node " + std::to_string(c.node));
  }
  const int64_t m = codes.front().values.shape[0];
  auto ag = build_agg_graph(topo, m, 0.0);
  ag->g.set_output(ag->probs_id);
  // the receiver reconstructs from transmitted levels when quantized
  for (const auto& c : codes) {
    Tensor v = c.values;
    if (c.quantized()) v = dequantize(*topo.quantizer, c.levels, v.shape);
    ag->g.bind("c" + std::to_string(c.node), v);
  }
  ag->g.bind("labels", Tensor({m}));  // unused by the probability output
  for (const auto& [name, tensor] : params.owners[0]) ag->g.bind(name, tensor);
  return ag->g.forward();
}

double total_loss(const SplitTopology& topo, const ModelParams& params, const std::vector<Tensor>& node_inputs,
                  const std::vector<int>& labels, const LossConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("empty batch");
  if (static_cast<int>(node_inputs.size()) != topo.num_nodes())
    throw std::invalid_argument("expected one input tensor per node");
  const int64_t m = static_cast<int64_t>(labels.size());
  auto sg = build_split_graph(topo, m, topo.quantizer ? QuantizerMode::Hard : QuantizerMode::Off, cfg.lambda);
  for (int node = 1; node <= topo.num_nodes(); ++node)
    sg->g.bind("x" + std::to_string(node), node_inputs[static_cast<size_t>(node - 1)]);
  sg->g.bind("labels", labels_tensor(labels));
  bind_params(sg->g, params);
  return sg->g.forward()[0];
}

}  // namespace splitnn
