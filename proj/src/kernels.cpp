#include "splitnn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace splitnn::kern {

double sigmoid1(double x) {
  // branch keeps exp() argument non-positive
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// four independent accumulators, combined in a fixed order
inline double dot(const double* a, const double* b, int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Same-padded convolution runs as patches-times-filters: each output pixel's
// receptive field is copied into one row of a (h*w, kh*kw*cin) matrix, with
// zeros where the kernel hangs over the border. Row layout matches the filter
// layout (kh, kw, cin), so the forward pass is one matmul_nt per sample.
inline void im2col_one(const double* xs, double* patches, int64_t h, int64_t wd, int64_t cin, int64_t kh,
                       int64_t kw) {
  const int64_t ph = kh / 2, pw = kw / 2, k = kh * kw * cin;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < wd; ++j) {
      double* row = patches + (i * wd + j) * k;
      for (int64_t di = 0; di < kh; ++di) {
        const int64_t p = i + di - ph;
        double* dst = row + di * kw * cin;
        if (p < 0 || p >= h) {
          std::memset(dst, 0, sizeof(double) * static_cast<size_t>(kw * cin));
          continue;
        }
        for (int64_t dj = 0; dj < kw; ++dj) {
          const int64_t q = j + dj - pw;
          if (q < 0 || q >= wd) {
            std::memset(dst + dj * cin, 0, sizeof(double) * static_cast<size_t>(cin));
          } else {
            std::memcpy(dst + dj * cin, xs + (p * wd + q) * cin, sizeof(double) * static_cast<size_t>(cin));
          }
        }
      }
    }
}

// scatter-add of patch-shaped gradients back onto the input image
inline void col2im_one(const double* dpatches, double* dxs, int64_t h, int64_t wd, int64_t cin, int64_t kh,
                       int64_t kw) {
  const int64_t ph = kh / 2, pw = kw / 2, k = kh * kw * cin;
  std::memset(dxs, 0, sizeof(double) * static_cast<size_t>(h * wd * cin));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < wd; ++j) {
      const double* row = dpatches + (i * wd + j) * k;
      for (int64_t di = 0; di < kh; ++di) {
        const int64_t p = i + di - ph;
        if (p < 0 || p >= h) continue;
        for (int64_t dj = 0; dj < kw; ++dj) {
          const int64_t q = j + dj - pw;
          if (q < 0 || q >= wd) continue;
          for (int64_t c = 0; c < cin; ++c) dxs[(p * wd + q) * cin + c] += row[(di * kw + dj) * cin + c];
        }
      }
    }
}

inline void conv2d_same_one(const double* xs, const double* w, const double* bias, double* ys,
                            int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw,
                            double* patches) {
  const int64_t k = kh * kw * cin, n = h * wd;
  im2col_one(xs, patches, h, wd, cin, kh, kw);
  for (int64_t r = 0; r < n; ++r) {
    const double* row = patches + r * k;
    for (int64_t o = 0; o < f; ++o) ys[r * f + o] = (bias ? bias[o] : 0.0) + dot(row, w + o * k, k);
  }
}

inline void conv2d_same_dx_one(const double* dys, const double* w, double* dxs,
                               int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw,
                               double* dpatches) {
  const int64_t k = kh * kw * cin, n = h * wd;
  // dP = dY . W
  for (int64_t r = 0; r < n; ++r) {
    double* row = dpatches + r * k;
    std::memset(row, 0, sizeof(double) * static_cast<size_t>(k));
    for (int64_t o = 0; o < f; ++o) axpy(dys[r * f + o], w + o * k, row, k);
  }
  col2im_one(dpatches, dxs, h, wd, cin, kh, kw);
}

// accumulates one filter's weight gradient over the whole batch; `patches`
// holds the precomputed im2col rows of every sample
inline void conv2d_same_dw_one(const double* dy, const double* patches, double* dwo, double* dbo,
                               int64_t m, int64_t n, int64_t f, int64_t k, int64_t o) {
  std::memset(dwo, 0, sizeof(double) * static_cast<size_t>(k));
  double db = 0.0;
  for (int64_t s = 0; s < m; ++s) {
    const double* dys = dy + s * n * f;
    const double* ps = patches + s * n * k;
    for (int64_t r = 0; r < n; ++r) {
      const double g = dys[r * f + o];
      db += g;
      axpy(g, ps + r * k, dwo, k);
    }
  }
  if (dbo) *dbo = db;
}

inline void maxpool2_one(const double* xs, double* ys, int32_t* am, int64_t h, int64_t w, int64_t c) {
  const int64_t oh = h / 2, ow = w / 2;
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j)
      for (int64_t ch = 0; ch < c; ++ch) {
        double best = xs[((2 * i) * w + 2 * j) * c + ch];
        int32_t arg = 0;
        for (int32_t v = 1; v < 4; ++v) {
          double cand = xs[((2 * i + v / 2) * w + (2 * j + v % 2)) * c + ch];
          if (cand > best) {
            best = cand;
            arg = v;
          }
        }
        ys[(i * ow + j) * c + ch] = best;
        am[(i * ow + j) * c + ch] = arg;
      }
}

inline void maxpool2_dx_one(const double* dys, const int32_t* am, double* dxs, int64_t h, int64_t w, int64_t c) {
  const int64_t oh = h / 2, ow = w / 2;
  std::memset(dxs, 0, sizeof(double) * static_cast<size_t>(h * w * c));
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j)
      for (int64_t ch = 0; ch < c; ++ch) {
        int32_t v = am[(i * ow + j) * c + ch];
        dxs[((2 * i + v / 2) * w + (2 * j + v % 2)) * c + ch] += dys[(i * ow + j) * c + ch];
      }
}

}  // namespace

namespace serial {

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
}

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
    for (int64_t p = 0; p < k; ++p) axpy(a[i * k + p], b + p * n, ci, n);
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
    for (int64_t p = 0; p < k; ++p) axpy(a[p * m + i], b + p * n, ci, n);
  }
}

void conv2d_same(const double* x, const double* w, const double* bias, double* y,
                 int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
  std::vector<double> patches(static_cast<size_t>(h * wd * kh * kw * cin));
  for (int64_t s = 0; s < m; ++s)
    conv2d_same_one(x + s * h * wd * cin, w, bias, y + s * h * wd * f, h, wd, cin, f, kh, kw, patches.data());
}

void conv2d_same_dx(const double* dy, const double* w, double* dx,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
  std::vector<double> dpatches(static_cast<size_t>(h * wd * kh * kw * cin));
  for (int64_t s = 0; s < m; ++s)
    conv2d_same_dx_one(dy + s * h * wd * f, w, dx + s * h * wd * cin, h, wd, cin, f, kh, kw, dpatches.data());
}

void conv2d_same_dw(const double* dy, const double* x, double* dw, double* dbias,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
  const int64_t n = h * wd, k = kh * kw * cin;
  std::vector<double> patches(static_cast<size_t>(m * n * k));
  for (int64_t s = 0; s < m; ++s) im2col_one(x + s * n * cin, patches.data() + s * n * k, h, wd, cin, kh, kw);
  for (int64_t o = 0; o < f; ++o)
    conv2d_same_dw_one(dy, patches.data(), dw + o * k, dbias ? dbias + o : nullptr, m, n, f, k, o);
}

void maxpool2(const double* x, double* y, int32_t* argmax, int64_t m, int64_t h, int64_t w, int64_t c) {
  for (int64_t s = 0; s < m; ++s)
    maxpool2_one(x + s * h * w * c, y + s * (h / 2) * (w / 2) * c, argmax + s * (h / 2) * (w / 2) * c, h, w, c);
}

void maxpool2_dx(const double* dy, const int32_t* argmax, double* dx, int64_t m, int64_t h, int64_t w, int64_t c) {
  for (int64_t s = 0; s < m; ++s)
    maxpool2_dx_one(dy + s * (h / 2) * (w / 2) * c, argmax + s * (h / 2) * (w / 2) * c, dx + s * h * w * c, h, w, c);
}

void vsigmoid(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = sigmoid1(x[i]);
}
void vtanh(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
void vrelu(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void vadd(const double* a, const double* b, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void vmul(const double* a, const double* b, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void vscale(const double* x, double alpha, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
void vaddrow(const double* x, const double* row, double* y, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + row[j];
}

}  // namespace serial

// Parallel versions. Work-size guards keep tiny tensors off the thread pool.
// Large operands are tiled so the streamed matrix passes through the caches
// once instead of once per output row; the per-element arithmetic (and hence
// the result, bit for bit) is the same as the serial reference.

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  constexpr int64_t kTileRows = 16;
  if (n * k * 8 <= (1 << 20)) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t j0 = 0; j0 < n; j0 += kTileRows) {
    const int64_t j1 = std::min(j0 + kTileRows, n);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = j0; j < j1; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
  }
}

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  constexpr int64_t kTileRows = 16;
  if (k <= 64 || k * n * 8 <= (1 << 20)) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
      for (int64_t p = 0; p < k; ++p) axpy(a[i * k + p], b + p * n, ci, n);
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) std::memset(c + i * n, 0, sizeof(double) * static_cast<size_t>(n));
  for (int64_t p0 = 0; p0 < k; p0 += kTileRows) {
    const int64_t p1 = std::min(p0 + kTileRows, k);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (int64_t p = p0; p < p1; ++p) axpy(a[i * k + p], b + p * n, ci, n);
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
    for (int64_t p = 0; p < k; ++p) axpy(a[p * m + i], b + p * n, ci, n);
  }
}

void conv2d_same(const double* x, const double* w, const double* bias, double* y,
                 int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
#pragma omp parallel if (m > 1)
  {
    std::vector<double> patches(static_cast<size_t>(h * wd * kh * kw * cin));
#pragma omp for schedule(static)
    for (int64_t s = 0; s < m; ++s)
      conv2d_same_one(x + s * h * wd * cin, w, bias, y + s * h * wd * f, h, wd, cin, f, kh, kw,
                      patches.data());
  }
}

void conv2d_same_dx(const double* dy, const double* w, double* dx,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
#pragma omp parallel if (m > 1)
  {
    std::vector<double> dpatches(static_cast<size_t>(h * wd * kh * kw * cin));
#pragma omp for schedule(static)
    for (int64_t s = 0; s < m; ++s)
      conv2d_same_dx_one(dy + s * h * wd * f, w, dx + s * h * wd * cin, h, wd, cin, f, kh, kw,
                         dpatches.data());
  }
}

void conv2d_same_dw(const double* dy, const double* x, double* dw, double* dbias,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw) {
  const int64_t n = h * wd, k = kh * kw * cin;
  std::vector<double> patches(static_cast<size_t>(m * n * k));
#pragma omp parallel for schedule(static) if (m > 1)
  for (int64_t s = 0; s < m; ++s) im2col_one(x + s * n * cin, patches.data() + s * n * k, h, wd, cin, kh, kw);
#pragma omp parallel for schedule(static) if (f > 1)
  for (int64_t o = 0; o < f; ++o)
    conv2d_same_dw_one(dy, patches.data(), dw + o * k, dbias ? dbias + o : nullptr, m, n, f, k, o);
}

void maxpool2(const double* x, double* y, int32_t* argmax, int64_t m, int64_t h, int64_t w, int64_t c) {
#pragma omp parallel for schedule(static) if (m > 1)
  for (int64_t s = 0; s < m; ++s)
    maxpool2_one(x + s * h * w * c, y + s * (h / 2) * (w / 2) * c, argmax + s * (h / 2) * (w / 2) * c, h, w, c);
}

void maxpool2_dx(const double* dy, const int32_t* argmax, double* dx, int64_t m, int64_t h, int64_t w, int64_t c) {
#pragma omp parallel for schedule(static) if (m > 1)
  for (int64_t s = 0; s < m; ++s)
    maxpool2_dx_one(dy + s * (h / 2) * (w / 2) * c, argmax + s * (h / 2) * (w / 2) * c, dx + s * h * w * c, h, w, c);
}

void vsigmoid(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 8192)
  for (int64_t i = 0; i < n; ++i) y[i] = sigmoid1(x[i]);
}
void vtanh(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 8192)
  for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
void vrelu(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 8192)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void vadd(const double* a, const double* b, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void vmul(const double* a, const double* b, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void vscale(const double* x, double alpha, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
void vaddrow(const double* x, const double* row, double* y, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static) if (m * n > 16384)
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + row[j];
}

}  // namespace splitnn::kern
