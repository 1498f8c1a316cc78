#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace splitnn {

// Uniform q-bit quantizer over a closed range. Values are clipped to [lo,hi],
// mapped to one of 2^bits level indices, and reconstructed as bin centers.
struct QuantizerSpec {
  int bits = 4;
  double lo = 0.0;
  double hi = 1.0;

  int64_t level_count() const { return int64_t{1} << bits; }

  int32_t level_of(double x) const {
    const double cl = std::clamp(x, lo, hi);
    const double n = static_cast<double>(level_count());
    int32_t lv = static_cast<int32_t>(std::floor((cl - lo) / (hi - lo) * n));
    return std::min<int32_t>(lv, static_cast<int32_t>(level_count()) - 1);
  }

  double value_of(int32_t level) const {
    return lo + (static_cast<double>(level) + 0.5) * (hi - lo) / static_cast<double>(level_count());
  }
};

}  // namespace splitnn
