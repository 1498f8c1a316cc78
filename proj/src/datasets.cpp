#include "splitnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "splitnn/rng.hpp"

namespace splitnn {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_be32(std::istream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw std::runtime_error("truncated IDX header in " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be32(std::ostream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledImages load_mnist_idx(const std::string& image_path, const std::string& label_path) {
  std::ifstream imgf(image_path, std::ios::binary);
  if (!imgf) throw std::runtime_error("cannot open image file: " + image_path);
  const uint32_t magic = read_be32(imgf, image_path);
  if (magic != kImageMagic)
    throw std::runtime_error("bad image magic 0x" + std::to_string(magic) + " in " + image_path +
                             " (expected 0x00000803)");
  const uint32_t n = read_be32(imgf, image_path);
  const uint32_t rows = read_be32(imgf, image_path);
  const uint32_t cols = read_be32(imgf, image_path);

  std::ifstream labf(label_path, std::ios::binary);
  if (!labf) throw std::runtime_error("cannot open label file: " + label_path);
  const uint32_t lmagic = read_be32(labf, label_path);
  if (lmagic != kLabelMagic)
    throw std::runtime_error("bad label magic 0x" + std::to_string(lmagic) + " in " + label_path +
                             " (expected 0x00000801)");
  const uint32_t ln = read_be32(labf, label_path);
  if (ln != n)
    throw std::runtime_error("count mismatch: " + std::to_string(n) + " images in " + image_path + " vs " +
                             std::to_string(ln) + " labels in " + label_path);

  LabeledImages out;
  out.images = Tensor({static_cast<int64_t>(n), static_cast<int64_t>(rows), static_cast<int64_t>(cols)});
  std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
  for (uint32_t i = 0; i < n; ++i) {
    imgf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (imgf.gcount() != static_cast<std::streamsize>(buf.size()))
      throw std::runtime_error("truncated image payload at sample " + std::to_string(i) + " in " + image_path);
    double* dst = out.images.data.data() + static_cast<int64_t>(i) * rows * cols;
    for (size_t p = 0; p < buf.size(); ++p) dst[p] = static_cast<double>(buf[p]) / 255.0;
  }
  out.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    char c;
    labf.read(&c, 1);
    if (!labf) throw std::runtime_error("truncated label payload at sample " + std::to_string(i) + " in " + label_path);
    const int lab = static_cast<unsigned char>(c);
    if (lab > 9)
      throw std::runtime_error("label " + std::to_string(lab) + " out of range at sample " + std::to_string(i));
    out.labels[i] = lab;
  }
  return out;
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 3) throw std::invalid_argument("write_idx_images: expected (n,rows,cols)");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_be32(f, kImageMagic);
  write_be32(f, static_cast<uint32_t>(images.shape[0]));
  write_be32(f, static_cast<uint32_t>(images.shape[1]));
  write_be32(f, static_cast<uint32_t>(images.shape[2]));
  for (double v : images.data) {
    const double clipped = std::clamp(v, 0.0, 1.0);
    const unsigned char byte = static_cast<unsigned char>(std::lround(clipped * 255.0));
    f.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!f) throw std::runtime_error("failed writing " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_be32(f, kLabelMagic);
  write_be32(f, static_cast<uint32_t>(labels.size()));
  for (int lab : labels) {
    const unsigned char byte = static_cast<unsigned char>(lab);
    f.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!f) throw std::runtime_error("failed writing " + path);
}

std::array<Tensor, 4> partition_quadrants(const Tensor& images) {
  Tensor batch = images;
  if (images.rank() == 2) batch = Tensor({1, images.shape[0], images.shape[1]}, images.data);
  if (batch.rank() != 3 || batch.shape[1] != batch.shape[2] || batch.shape[1] % 2 != 0)
    throw std::invalid_argument("partition_quadrants: expected square images with even side, got " +
                                shape_str(images.shape));
  const int64_t n = batch.shape[0], side = batch.shape[1], half = side / 2;
  std::array<Tensor, 4> parts;
  for (auto& p : parts) p = Tensor({n, half, half, 1});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t r = 0; r < side; ++r)
      for (int64_t c = 0; c < side; ++c) {
        const int quad = (r < half ? 0 : 2) + (c < half ? 0 : 1);
        parts[static_cast<size_t>(quad)][(s * half + (r % half)) * half + (c % half)] =
            batch[(s * side + r) * side + c];
      }
  return parts;
}

Tensor stitch_quadrants(const std::array<Tensor, 4>& parts) {
  const int64_t n = parts[0].shape[0], half = parts[0].shape[1];
  for (const auto& p : parts)
    if (p.shape != std::vector<int64_t>{n, half, half, 1})
      throw std::invalid_argument("stitch_quadrants: inconsistent quadrant shapes");
  const int64_t side = 2 * half;
  Tensor out({n, side, side});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t r = 0; r < side; ++r)
      for (int64_t c = 0; c < side; ++c) {
        const int quad = (r < half ? 0 : 2) + (c < half ? 0 : 1);
        out[(s * side + r) * side + c] =
            parts[static_cast<size_t>(quad)][(s * half + (r % half)) * half + (c % half)];
      }
  return out;
}

namespace {

struct Pt {
  double x, y;
};

// stroke skeletons in the unit square, y pointing down
std::vector<std::vector<Pt>> digit_strokes(int digit) {
  auto circle = [](double cx, double cy, double rx, double ry, double a0 = 0.0, double a1 = 6.2831853,
                   int pts = 20) {
    std::vector<Pt> v;
    for (int i = 0; i <= pts; ++i) {
      double a = a0 + (a1 - a0) * i / pts;
      v.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
    }
    return v;
  };
  switch (digit) {
    case 0: return {circle(0.50, 0.50, 0.26, 0.36)};
    case 1: return {{{0.38, 0.28}, {0.54, 0.14}, {0.54, 0.86}}};
    case 2:
      return {{{0.28, 0.32}, {0.34, 0.18}, {0.52, 0.13}, {0.68, 0.20}, {0.71, 0.36}, {0.58, 0.53},
               {0.40, 0.68}, {0.28, 0.84}},
              {{0.28, 0.84}, {0.72, 0.84}}};
    case 3:
      return {{{0.30, 0.20}, {0.48, 0.13}, {0.66, 0.20}, {0.67, 0.36}, {0.50, 0.47}},
              {{0.50, 0.47}, {0.69, 0.57}, {0.70, 0.75}, {0.50, 0.86}, {0.30, 0.79}}};
    case 4: return {{{0.60, 0.14}, {0.28, 0.58}, {0.76, 0.58}}, {{0.62, 0.34}, {0.62, 0.88}}};
    case 5:
      return {{{0.68, 0.15}, {0.34, 0.15}, {0.31, 0.44}},
              {{0.31, 0.44}, {0.52, 0.40}, {0.68, 0.50}, {0.69, 0.70}, {0.54, 0.84}, {0.32, 0.80}}};
    case 6:
      return {{{0.62, 0.13}, {0.44, 0.24}, {0.34, 0.44}, {0.32, 0.62}}, {circle(0.50, 0.67, 0.18, 0.19)}};
    case 7: return {{{0.28, 0.15}, {0.72, 0.15}, {0.46, 0.86}}};
    case 8: return {circle(0.50, 0.31, 0.16, 0.17), circle(0.50, 0.67, 0.20, 0.20)};
    case 9: return {circle(0.52, 0.34, 0.17, 0.19), {{0.69, 0.36}, {0.64, 0.62}, {0.56, 0.86}}};
    default: throw std::invalid_argument("digit out of range");
  }
}

double seg_dist(double px, double py, const Pt& a, const Pt& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

LabeledImages synth_digits(uint64_t seed, int64_t count, int side) {
  Rng rng(seed);
  LabeledImages out;
  out.images = Tensor({count, side, side});
  out.labels.resize(static_cast<size_t>(count));
  std::vector<double> canvas(static_cast<size_t>(side * side));
  for (int64_t s = 0; s < count; ++s) {
    const int digit = static_cast<int>(rng.below(10));
    out.labels[static_cast<size_t>(s)] = digit;

    // per-sample jitter
    const double angle = rng.uniform(-0.30, 0.30);
    const double scale = rng.uniform(0.80, 1.12);
    const double shear = rng.uniform(-0.22, 0.22);
    const double tx = rng.uniform(-0.09, 0.09);
    const double ty = rng.uniform(-0.09, 0.09);
    const double thickness = rng.uniform(0.040, 0.075);
    const double intensity = rng.uniform(0.72, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);

    auto strokes = digit_strokes(digit);
    for (auto& stroke : strokes)
      for (auto& p : stroke) {
        double x = (p.x - 0.5) * scale, y = (p.y - 0.5) * scale;
        x += shear * y;
        const double xr = ca * x - sa * y, yr = sa * x + ca * y;
        p = {xr + 0.5 + tx, yr + 0.5 + ty};
      }

    std::fill(canvas.begin(), canvas.end(), 0.0);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double py = (r + 0.5) / side, px = (c + 0.5) / side;
        double d = 1e9;
        for (const auto& stroke : strokes)
          for (size_t i = 0; i + 1 < stroke.size(); ++i)
            d = std::min(d, seg_dist(px, py, stroke[i], stroke[i + 1]));
        // soft pen edge
        const double v = std::clamp((thickness - d) / 0.02 + 0.5, 0.0, 1.0);
        canvas[static_cast<size_t>(r * side + c)] = intensity * v;
      }

    double* dst = out.images.data.data() + s * side * side;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        // 3x3 box blur plus pixel noise, clipped to [0,1]
        double acc = 0.0;
        int cnt = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
            acc += canvas[static_cast<size_t>(rr * side + cc)];
            ++cnt;
          }
        double v = acc / cnt + 0.06 * rng.normal();
        dst[r * side + c] = std::clamp(v, 0.0, 1.0);
      }
    // quantize through the byte representation so generated data matches what
    // an IDX round-trip would produce
    for (int p = 0; p < side * side; ++p)
      dst[p] = std::lround(dst[p] * 255.0) / 255.0;
  }
  return out;
}

int SeriesData::label_at(int64_t t) const {
  const double z = latent[static_cast<size_t>(t)];
  int lo = 0, hi = static_cast<int>(bin_edges.size());
  while (lo < hi) {
    const int mid = (lo + hi) / 2;
    if (z <= bin_edges[static_cast<size_t>(mid)])
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

namespace {

// shared latent: two slow sinusoids plus an Ornstein-Uhlenbeck walk
std::vector<double> gen_latent(uint64_t seed, int64_t length) {
  Rng rng(derive_seed(seed, 7));
  std::vector<double> z(static_cast<size_t>(length));
  const double p1 = rng.uniform(230.0, 270.0);
  const double p2 = rng.uniform(85.0, 110.0);
  const double ph1 = rng.uniform(0.0, 6.28);
  const double ph2 = rng.uniform(0.0, 6.28);
  double ou = 0.0;
  for (int64_t t = 0; t < length; ++t) {
    ou = 0.995 * ou + 0.045 * rng.normal();
    z[static_cast<size_t>(t)] = std::sin(6.2831853 * t / p1 + ph1) + 0.6 * std::sin(6.2831853 * t / p2 + ph2) + ou;
  }
  return z;
}

}  // namespace

SeriesData gen_synthetic_series(const SeriesConfig& cfg) {
  if (cfg.length < cfg.window * 4) throw std::invalid_argument("series too short for the window size");
  SeriesData out;
  out.cfg = cfg;

  // quantile edges from a fixed-length calibration stream with the same seed,
  // so labels are a pure function of the latent value
  const int64_t calib_len = 20000;
  std::vector<double> calib = gen_latent(cfg.seed, calib_len);
  std::sort(calib.begin(), calib.end());
  for (int b = 1; b < cfg.classes; ++b)
    out.bin_edges.push_back(calib[static_cast<size_t>(calib_len * b / cfg.classes)]);

  out.latent = gen_latent(cfg.seed, cfg.length);
  out.channels = Tensor({cfg.length, cfg.nodes});
  Rng rng(derive_seed(cfg.seed, 11));
  std::vector<double> offsets, noise_scale, ar;
  for (int i = 0; i < cfg.nodes; ++i) {
    offsets.push_back(rng.uniform(-0.5, 0.5));
    noise_scale.push_back(rng.uniform(0.35, 0.55));
    ar.push_back(0.0);
  }
  for (int64_t t = 0; t < cfg.length; ++t)
    for (int i = 0; i < cfg.nodes; ++i) {
      ar[static_cast<size_t>(i)] = 0.6 * ar[static_cast<size_t>(i)] + rng.normal();
      out.channels[t * cfg.nodes + i] =
          out.latent[static_cast<size_t>(t)] + offsets[static_cast<size_t>(i)] +
          noise_scale[static_cast<size_t>(i)] * 0.8 * ar[static_cast<size_t>(i)];
    }
  return out;
}

void write_series_tsv(std::ostream& os, const SeriesData& d) {
  os << "t";
  for (int i = 0; i < d.cfg.nodes; ++i) os << "\tchannel" << (i + 1);
  os << "\tlabel\n";
  for (int64_t t = 0; t < d.cfg.length; ++t) {
    os << t;
    for (int i = 0; i < d.cfg.nodes; ++i) os << '\t' << d.channels[t * d.cfg.nodes + i];
    os << '\t' << d.label_at(t) << '\n';
  }
}

SplitDataset make_image_split(const LabeledImages& train, const LabeledImages& test, int64_t train_limit) {
  SplitDataset ds;
  const int64_t n_train = train_limit > 0 ? std::min(train_limit, train.count()) : train.count();
  Tensor train_subset({n_train, train.images.shape[1], train.images.shape[2]});
  std::copy(train.images.data.begin(), train.images.data.begin() + train_subset.size(),
            train_subset.data.begin());
  auto train_parts = partition_quadrants(train_subset);
  auto test_parts = partition_quadrants(test.images);
  for (int i = 0; i < 4; ++i) {
    ds.train_features.push_back(std::move(train_parts[static_cast<size_t>(i)]));
    ds.eval_features.push_back(std::move(test_parts[static_cast<size_t>(i)]));
  }
  ds.train_labels.assign(train.labels.begin(), train.labels.begin() + n_train);
  ds.eval_labels = test.labels;
  return ds;
}

SplitDataset make_image_centralized(const LabeledImages& train, const LabeledImages& test, int64_t train_limit) {
  SplitDataset ds;
  const int64_t n_train = train_limit > 0 ? std::min(train_limit, train.count()) : train.count();
  const int64_t side = train.images.shape[1];
  Tensor tr({n_train, side, side, 1});
  std::copy(train.images.data.begin(), train.images.data.begin() + tr.size(), tr.data.begin());
  Tensor te({test.count(), side, side, 1}, test.images.data);
  ds.train_features.push_back(std::move(tr));
  ds.eval_features.push_back(std::move(te));
  ds.train_labels.assign(train.labels.begin(), train.labels.begin() + n_train);
  ds.eval_labels = test.labels;
  return ds;
}

SplitDataset make_series_split(const SeriesData& d, bool centralized) {
  const int64_t w = d.cfg.window;
  const int64_t last_start = d.cfg.length - w;  // window covers [t, t+w-1]
  // contiguous 5:1 split with a one-window gap against leakage
  const int64_t train_windows = last_start * 5 / 6;
  const int64_t eval_begin = train_windows + w;
  if (eval_begin >= last_start) throw std::invalid_argument("series too short to split");

  auto emit = [&](int64_t begin, int64_t end, std::vector<Tensor>& feats, std::vector<int>& labels) {
    const int64_t n = end - begin;
    if (centralized) {
      Tensor x({n, w, d.cfg.nodes});
      for (int64_t s = 0; s < n; ++s)
        for (int64_t t = 0; t < w; ++t)
          for (int i = 0; i < d.cfg.nodes; ++i)
            x[(s * w + t) * d.cfg.nodes + i] = d.channels[(begin + s + t) * d.cfg.nodes + i];
      feats.push_back(std::move(x));
    } else {
      for (int i = 0; i < d.cfg.nodes; ++i) {
        Tensor x({n, w, 1});
        for (int64_t s = 0; s < n; ++s)
          for (int64_t t = 0; t < w; ++t) x[s * w + t] = d.channels[(begin + s + t) * d.cfg.nodes + i];
        feats.push_back(std::move(x));
      }
    }
    for (int64_t s = 0; s < n; ++s) labels.push_back(d.label_at(begin + s + w - 1));
  };

  SplitDataset ds;
  emit(0, train_windows, ds.train_features, ds.train_labels);
  emit(eval_begin, last_start, ds.eval_features, ds.eval_labels);
  return ds;
}

}  // namespace splitnn
