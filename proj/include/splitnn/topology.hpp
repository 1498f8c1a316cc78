#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitnn/layers.hpp"
#include "splitnn/quant.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn {

// Parameters of one owner (the aggregator or one node), keyed by declared name.
using ParamMap = std::map<std::string, Tensor>;

struct NodeStack {
  std::vector<int64_t> input_shape;  // per-sample, e.g. {14,14,1} or {50,1} or {196}
  std::vector<LayerSpec> layers;

  int64_t input_dim() const { return Tensor::numel(input_shape); }
  int64_t output_dim() const;
  int64_t param_count() const;
};

// Declarative description of the whole split model: N compressors, the
// quantizer, and the aggregator.
struct SplitTopology {
  std::vector<NodeStack> nodes;  // compressors, one per node
  std::optional<QuantizerSpec> quantizer;
  NodeStack aggregator;  // input dim must equal the total code dim
  int64_t num_classes = 0;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int64_t code_dim(int node) const { return nodes[static_cast<size_t>(node)].output_dim(); }
  int64_t total_code_dim() const;              // C
  int64_t feature_dim(int node) const { return nodes[static_cast<size_t>(node)].input_dim(); }  // d_i
  int64_t total_feature_dim() const;           // d
  void validate() const;
};

// w = {w_0 (aggregator), w_1..w_N (nodes)}; the partition is disjoint and
// complete by construction.
struct ModelParams {
  std::vector<ParamMap> owners;  // [0] aggregator, [1..N] nodes

  int aggregator() const { return 0; }
  int64_t count(int owner) const;
  int64_t total_count() const;
  std::vector<double> flat(int owner) const;            // deterministic (name-sorted) order
  void load_flat(int owner, const std::vector<double>&);
};

std::vector<ParamDecl> stack_param_decls(const NodeStack&, const std::string& prefix);
std::string owner_prefix(int owner);  // "agg" or "node<i>"

ModelParams init_params(const SplitTopology&, uint64_t seed);
void init_tensor(Tensor&, const ParamInit&, Rng&);

// Plain-text manifest round-trip for the topology.
std::string topology_to_text(const SplitTopology&);
SplitTopology topology_from_text(const std::string&);

// Checkpoint file: text manifest, a '---' separator line, then one flat
// little-endian float64 array per owner (aggregator first), lengths declared
// in the manifest and verified against the topology on load.
void save_checkpoint(const SplitTopology&, const ModelParams&, const std::string& path);
std::pair<SplitTopology, ModelParams> load_checkpoint(const std::string& path);

// Experiment topologies.
SplitTopology image_split_topology(int64_t C, std::optional<int> q_bits, int image_side = 28, int nodes = 4,
                                   int classes = 10);
SplitTopology image_centralized_topology(int image_side = 28, int classes = 10);
SplitTopology series_split_topology(std::optional<int> q_bits, int window = 50, int nodes = 4, int classes = 20);
SplitTopology series_centralized_topology(int window = 50, int channels = 4, int classes = 20);

}  // namespace splitnn
