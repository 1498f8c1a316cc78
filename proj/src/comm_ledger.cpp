#include "splitnn/comm_ledger.hpp"

#include <ostream>
#include <stdexcept>

namespace splitnn {

void CommLedger::append(LedgerEntry e) {
  if (e.bits != e.values * e.bits_per_value)
    throw std::invalid_argument("ledger entry bits " + std::to_string(e.bits) + " != values*bits_per_value");
  total_bits_ += e.bits;
  entries_.push_back(e);
}

void CommLedger::append_trace(const ProtocolTrace& trace, int bits_per_code_value) {
  for (const auto& m : trace.messages) {
    LedgerEntry e;
    e.phase = Phase::Training;
    e.uplink = m.uplink;
    e.node = m.node;
    e.round = m.round;
    e.values = m.values;
    e.bits_per_value = m.role == Message::Role::Code ? bits_per_code_value : 32;
    e.bits = m.bits;
    append(e);
  }
}

bool CommLedger::conserved() const {
  int64_t sum = 0;
  for (const auto& e : entries_) sum += e.bits;
  return sum == total_bits_;
}

void CommLedger::write_tsv(std::ostream& os) const {
  os << "phase\tdirection\tnode\tround\tvalues\tbits_per_value\tbits\n";
  for (const auto& e : entries_)
    os << (e.phase == Phase::Inference ? "inference" : "training") << '\t' << (e.uplink ? "uplink" : "downlink")
       << '\t' << e.node << '\t' << e.round << '\t' << e.values << '\t' << e.bits_per_value << '\t' << e.bits
       << '\n';
}

InferenceBits bits_per_inference(const SplitTopology& topo) {
  topo.validate();
  InferenceBits out;
  const int bits_per_value = topo.quantizer ? topo.quantizer->bits : 32;
  for (int node = 0; node < topo.num_nodes(); ++node) {
    out.per_node.push_back(bits_per_value * topo.code_dim(node));
    out.total += out.per_node.back();
  }
  return out;
}

int64_t raw_baseline_bits(const FeatureBillingSpec& spec) {
  if (spec.bits_per_feature <= 0) throw std::invalid_argument("bits_per_feature must be positive");
  int64_t total = 0;
  for (int64_t d : spec.per_node_dims) {
    if (d < 0) throw std::invalid_argument("negative feature dimension");
    total += d * spec.bits_per_feature;
  }
  return total;
}

double savings_fraction(const SplitTopology& topo, const FeatureBillingSpec& spec) {
  const int64_t raw = raw_baseline_bits(spec);
  if (raw == 0) throw std::invalid_argument("raw baseline is zero bits");
  return 1.0 - static_cast<double>(bits_per_inference(topo).total) / static_cast<double>(raw);
}

TrafficSummary training_traffic(const ProtocolTrace& trace, int num_nodes) {
  trace.validate(num_nodes);
  TrafficSummary out;
  for (const auto& m : trace.messages) {
    if (m.round < 0) throw std::invalid_argument("trace message with unset round");
    if (static_cast<size_t>(m.round) >= out.per_round.size())
      out.per_round.resize(static_cast<size_t>(m.round) + 1);
    auto& rt = out.per_round[static_cast<size_t>(m.round)];
    (m.uplink ? rt.uplink : rt.downlink) += m.bits;
    (m.uplink ? out.uplink_total : out.downlink_total) += m.bits;
  }
  return out;
}

}  // namespace splitnn
