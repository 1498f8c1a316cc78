#include "splitnn/baselines.hpp"

namespace splitnn {

SplitTopology with_fdml_aggregator(SplitTopology topo, Activation act) {
  const int64_t c = topo.total_code_dim();
  topo.aggregator = NodeStack{};
  topo.aggregator.input_shape = {c};
  topo.aggregator.layers.push_back(FullyConnectedSpec{c, topo.num_classes, act});
  topo.validate();
  return topo;
}

SplitTopology with_quantizer(SplitTopology topo, std::optional<QuantizerSpec> q) {
  topo.quantizer = q;
  topo.validate();
  return topo;
}

int64_t aggregator_param_count(const SplitTopology& topo) { return topo.aggregator.param_count(); }

ReferenceResult centralized_reference(const SplitTopology& centralized_topo, const SplitDataset& data,
                                      const TrainConfig& cfg) {
  ReferenceResult out;
  out.train = train(centralized_topo, data, cfg, TrainMode::Centralized);
  if (!out.train.diverged && data.eval_count() > 0)
    out.accuracy = evaluate_accuracy(centralized_topo, out.train.params, data.eval_features, data.eval_labels);
  return out;
}

FdmlResult fdml_train_eval(const SplitTopology& fdml_topo, const SplitDataset& data, const TrainConfig& cfg,
                           TrainMode mode, const std::vector<int>& qs) {
  FdmlResult out;
  out.train = train(fdml_topo, data, cfg, mode);
  if (out.train.diverged || data.eval_count() == 0) return out;
  const SplitTopology plain = with_quantizer(fdml_topo, std::nullopt);
  out.acc_unquantized = evaluate_accuracy(plain, out.train.params, data.eval_features, data.eval_labels);
  for (int q : qs) {
    QuantizerSpec spec = fdml_topo.quantizer ? *fdml_topo.quantizer : QuantizerSpec{q, 0.0, 1.0};
    spec.bits = q;
    const SplitTopology quantized = with_quantizer(fdml_topo, spec);
    out.acc_by_q[q] = evaluate_accuracy(quantized, out.train.params, data.eval_features, data.eval_labels);
  }
  return out;
}

}  // namespace splitnn
