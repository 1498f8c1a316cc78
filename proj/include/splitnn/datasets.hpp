#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "splitnn/tensor.hpp"
#include "splitnn/trainer.hpp"

namespace splitnn {

struct LabeledImages {
  Tensor images;  // (n, side, side), values in [0,1]
  std::vector<int> labels;
  int64_t count() const { return static_cast<int64_t>(labels.size()); }
};

// IDX containers (big-endian headers, magic 0x803 for images / 0x801 for labels).
LabeledImages load_mnist_idx(const std::string& image_path, const std::string& label_path);
void write_idx_images(const std::string& path, const Tensor& images);  // rounds [0,1] floats to bytes
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// Quadrant split: node 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right.
std::array<Tensor, 4> partition_quadrants(const Tensor& images);
Tensor stitch_quadrants(const std::array<Tensor, 4>& parts);

// Seeded procedural handwritten-digit surrogate: 10 stroke-glyph classes with
// random affine jitter, thickness, intensity and pixel noise. Stands in for
// MNIST when the real files are not available locally.
LabeledImages synth_digits(uint64_t seed, int64_t count, int side = 28);

struct SeriesConfig {
  uint64_t seed = 1;
  int64_t length = 12000;
  int nodes = 4;
  int classes = 20;
  int window = 50;
};

struct SeriesData {
  SeriesConfig cfg;
  Tensor channels;               // (length, nodes)
  std::vector<double> latent;    // shared slow process
  std::vector<double> bin_edges; // classes-1 quantile edges from the calibration run
  int label_at(int64_t t) const; // quantile bin of latent[t]
};

// 4 correlated channels = shared latent + per-node offset + per-node noise;
// labels are quantile bins of the latent at the window end.
SeriesData gen_synthetic_series(const SeriesConfig& cfg);
void write_series_tsv(std::ostream&, const SeriesData&);

// Dataset assembly for the trainer.
SplitDataset make_image_split(const LabeledImages& train, const LabeledImages& test, int64_t train_limit);
SplitDataset make_image_centralized(const LabeledImages& train, const LabeledImages& test, int64_t train_limit);
// Sliding windows (stride 1) with a deterministic 5:1 contiguous train/eval
// split separated by one window length to avoid overlap.
SplitDataset make_series_split(const SeriesData&, bool centralized);

}  // namespace splitnn
