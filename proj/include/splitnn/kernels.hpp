#pragma once

#include <cstdint>

namespace splitnn::kern {

// Serial reference implementations. Kept for testing and benchmarking: the
// OpenMP versions below parallelize over independent output elements and
// evaluate each element with the same inner loop, so their results are
// bit-identical to these references for any thread count.
namespace serial {

// c[m,n] = a[m,k] . b[n,k]^T   (dot of rows; FC forward with W stored (out,in))
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// c[m,n] = a[m,k] . b[k,n]
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// c[m,n] = a[k,m]^T . b[k,n]
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// x (m,h,w,cin), w (f,kh,kw,cin), bias (f) or null, y (m,h,w,f); same padding, stride 1, odd kernel.
void conv2d_same(const double* x, const double* w, const double* bias, double* y,
                 int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);
void conv2d_same_dx(const double* dy, const double* w, double* dx,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);
void conv2d_same_dw(const double* dy, const double* x, double* dw, double* dbias,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);

// x (m,h,w,c) with even h,w -> y (m,h/2,w/2,c); argmax stores 0..3 (dy*2+dx) per output.
void maxpool2(const double* x, double* y, int32_t* argmax, int64_t m, int64_t h, int64_t w, int64_t c);
void maxpool2_dx(const double* dy, const int32_t* argmax, double* dx, int64_t m, int64_t h, int64_t w, int64_t c);

void vsigmoid(const double* x, double* y, int64_t n);
void vtanh(const double* x, double* y, int64_t n);
void vrelu(const double* x, double* y, int64_t n);
void vadd(const double* a, const double* b, double* y, int64_t n);
void vmul(const double* a, const double* b, double* y, int64_t n);
void vscale(const double* x, double alpha, double* y, int64_t n);
// y (m,n) = x (m,n) + row (n)
void vaddrow(const double* x, const double* row, double* y, int64_t m, int64_t n);

}  // namespace serial

// OpenMP-parallel versions (the default used by the graph engine).
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void conv2d_same(const double* x, const double* w, const double* bias, double* y,
                 int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);
void conv2d_same_dx(const double* dy, const double* w, double* dx,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);
void conv2d_same_dw(const double* dy, const double* x, double* dw, double* dbias,
                    int64_t m, int64_t h, int64_t wd, int64_t cin, int64_t f, int64_t kh, int64_t kw);
void maxpool2(const double* x, double* y, int32_t* argmax, int64_t m, int64_t h, int64_t w, int64_t c);
void maxpool2_dx(const double* dy, const int32_t* argmax, double* dx, int64_t m, int64_t h, int64_t w, int64_t c);
void vsigmoid(const double* x, double* y, int64_t n);
void vtanh(const double* x, double* y, int64_t n);
void vrelu(const double* x, double* y, int64_t n);
void vadd(const double* a, const double* b, double* y, int64_t n);
void vmul(const double* a, const double* b, double* y, int64_t n);
void vscale(const double* x, double alpha, double* y, int64_t n);
void vaddrow(const double* x, const double* row, double* y, int64_t m, int64_t n);

double sigmoid1(double x);

}  // namespace splitnn::kern
