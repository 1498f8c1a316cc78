#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "splitnn/topology.hpp"
#include "splitnn/trainer.hpp"

namespace splitnn {

enum class Phase { Inference, Training };

struct LedgerEntry {
  Phase phase = Phase::Inference;
  bool uplink = true;
  int node = 0;
  int round = -1;  // training only
  int64_t values = 0;
  int bits_per_value = 0;
  int64_t bits = 0;
};

// Append-only record of every logical transmission.
class CommLedger {
 public:
  void append(LedgerEntry e);
  void append_trace(const ProtocolTrace& trace, int bits_per_code_value);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  int64_t total_bits() const { return total_bits_; }
  // recomputes the running total from scratch; true when nothing was lost or
  // double counted
  bool conserved() const;
  void write_tsv(std::ostream&) const;

 private:
  std::vector<LedgerEntry> entries_;
  int64_t total_bits_ = 0;
};

struct InferenceBits {
  std::vector<int64_t> per_node;
  int64_t total = 0;
};

// Bits each node sends for one inference: q x code_dim when quantized,
// 32 x code_dim otherwise.
InferenceBits bits_per_inference(const SplitTopology&);

struct FeatureBillingSpec {
  std::vector<int64_t> per_node_dims;
  int bits_per_feature = 8;
};

int64_t raw_baseline_bits(const FeatureBillingSpec&);

double savings_fraction(const SplitTopology&, const FeatureBillingSpec&);

struct RoundTraffic {
  int64_t uplink = 0;
  int64_t downlink = 0;
};

struct TrafficSummary {
  std::vector<RoundTraffic> per_round;
  int64_t uplink_total = 0;
  int64_t downlink_total = 0;
};

TrafficSummary training_traffic(const ProtocolTrace& trace, int num_nodes);

}  // namespace splitnn
