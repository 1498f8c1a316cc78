#pragma once

#include <map>
#include <optional>
#include <vector>

#include "splitnn/topology.hpp"
#include "splitnn/trainer.hpp"

namespace splitnn {

// Shallow comparison aggregator: one affine map from the concatenated codes to
// class scores (a weighted sum), an optional activation, then softmax. No
// hidden layer.
struct FdmlAggregatorSpec {
  int64_t input_dim = 0;
  int64_t classes = 0;
  Activation act = Activation::Identity;  // sigmoid variant available
};

// Same node stacks and quantizer as the given topology, aggregator replaced by
// the shallow one.
SplitTopology with_fdml_aggregator(SplitTopology topo, Activation act = Activation::Identity);

// Replace (or remove) the quantizer, e.g. to evaluate one model at several q.
SplitTopology with_quantizer(SplitTopology topo, std::optional<QuantizerSpec> q);

int64_t aggregator_param_count(const SplitTopology&);

struct ReferenceResult {
  TrainResult train;
  double accuracy = 0.0;
};

// Upper-bound scheme: all features in one place, trained centrally.
ReferenceResult centralized_reference(const SplitTopology& centralized_topo, const SplitDataset&,
                                      const TrainConfig&);

struct FdmlResult {
  TrainResult train;
  double acc_unquantized = 0.0;
  std::map<int, double> acc_by_q;
};

// Train the shallow-aggregator scheme end to end, then evaluate with and
// without q-bit quantization of the node outputs.
FdmlResult fdml_train_eval(const SplitTopology& fdml_topo, const SplitDataset&, const TrainConfig&,
                           TrainMode mode, const std::vector<int>& qs);

}  // namespace splitnn
