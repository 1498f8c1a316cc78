#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splitnn/graph.hpp"
#include "splitnn/topology.hpp"

namespace splitnn {

// What a node transmits for one batch: real values, or quantizer levels plus
// their dequantized reconstruction.
struct Code {
  int node = 0;                 // 1-based owner id
  Tensor values;                // (m, code_dim); dequantized bin centers when quantized
  std::vector<int32_t> levels;  // present iff quantized
  int bits_per_value = 32;

  bool quantized() const { return !levels.empty(); }
  int64_t bit_size() const { return static_cast<int64_t>(bits_per_value) * values.size(); }
};

struct LossConfig {
  double lambda = 0.0;  // L2 coefficient, applied per owner
};

// Whether/how the quantizer participates in a graph.
enum class QuantizerMode {
  Off,   // skip the quantizer entirely
  Hard,  // quantize on the forward pass; no gradient defined (inference)
  Ste,   // quantize forward, straight-through backward (training)
};

// End-to-end graph: per-node compressors -> (quantizer) -> concat ->
// aggregator -> logits; loss = mean cross-entropy + lambda * sum ||w_i||^2.
struct SplitGraph {
  Graph g;
  std::vector<int> input_ids;  // one per node
  int labels_id = -1;
  std::vector<int> code_ids;  // transmitted representation per node
  int concat_id = -1;
  int logits_id = -1;
  int probs_id = -1;
  int ce_id = -1;
  int loss_id = -1;
};

std::vector<int64_t> batched_shape(const std::vector<int64_t>& per_sample, int64_t m);

std::unique_ptr<SplitGraph> build_split_graph(const SplitTopology&, int64_t batch, QuantizerMode mode,
                                              double lambda);
void bind_params(Graph& g, const ModelParams&);

// Node-local graph for the distributed protocol: features -> code.
struct NodeGraph {
  Graph g;
  int input_id = -1;
  int code_id = -1;
};
std::unique_ptr<NodeGraph> build_node_graph(const SplitTopology&, int node, int64_t batch, QuantizerMode mode);

// Aggregator-side graph: code inputs (with gradients) -> loss with the
// aggregator's own regularizer only.
struct AggGraph {
  Graph g;
  std::vector<int> code_input_ids;
  int labels_id = -1;
  int logits_id = -1;
  int probs_id = -1;
  int ce_id = -1;
  int loss_id = -1;
};
std::unique_ptr<AggGraph> build_agg_graph(const SplitTopology&, int64_t batch, double lambda);

// Spec-level operations.
Code node_compress(const SplitTopology&, const ModelParams&, int node, const Tensor& x_i);
Tensor aggregate_infer(const SplitTopology&, const ModelParams&, const std::vector<Code>& codes);
double total_loss(const SplitTopology&, const ModelParams&, const std::vector<Tensor>& node_inputs,
                  const std::vector<int>& labels, const LossConfig& cfg);

Tensor labels_tensor(const std::vector<int>& labels);

}  // namespace splitnn
