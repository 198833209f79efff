// src/kernels/kernels.cpp

// Copyright 2026  The asdloop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "asd/kernels/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <omp.h>

namespace asd::kernels {
namespace {

// Valid output-column range [lo, hi) for kernel tap kw: the input column
// ow*stride + kw - pad must land inside [0, in_w).
inline void tap_range(std::size_t out_w, std::size_t in_w, std::size_t stride,
                      std::size_t pad, std::size_t k, std::size_t* lo,
                      std::size_t* hi) {
  const long long p = static_cast<long long>(pad) - static_cast<long long>(k);
  const long long s = static_cast<long long>(stride);
  long long l = 0;
  if (p > 0) l = (p + s - 1) / s;
  long long h = (static_cast<long long>(in_w) - 1 + p);
  h = h < 0 ? 0 : h / s + 1;
  h = std::min<long long>(h, static_cast<long long>(out_w));
  *lo = static_cast<std::size_t>(std::min(l, h));
  *hi = static_cast<std::size_t>(h);
}

// Unfolds sample n into col[r * P + p] with r = (ic * k_h + kh) * k_w + kw
// (the weight layout) and p = oh * out_w + ow; padding taps are zero.
template <typename T>
void im2col(const Conv2dShape& s, std::size_t n, const T* x, T* col) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), P = oh_n * ow_n;
  for (std::size_t ic = 0; ic < s.in_ch; ++ic) {
    const T* xi = x + (n * s.in_ch + ic) * s.in_h * s.in_w;
    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
      for (std::size_t kw = 0; kw < s.k_w; ++kw) {
        T* cr = col + ((ic * s.k_h + kh) * s.k_w + kw) * P;
        std::size_t lo, hi;
        tap_range(ow_n, s.in_w, s.stride_w, s.pad_w, kw, &lo, &hi);
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          T* row = cr + oh * ow_n;
          const long long ih = static_cast<long long>(oh * s.stride_h + kh) -
                               static_cast<long long>(s.pad_h);
          if (ih < 0 || ih >= static_cast<long long>(s.in_h)) {
            std::fill(row, row + ow_n, T(0));
            continue;
          }
          const T* xr = xi + ih * static_cast<long long>(s.in_w) + static_cast<long long>(kw) -
                        static_cast<long long>(s.pad_w);
          std::fill(row, row + lo, T(0));
          for (std::size_t ow = lo; ow < hi; ++ow) row[ow] = xr[ow * s.stride_w];
          std::fill(row + hi, row + ow_n, T(0));
        }
      }
    }
  }
}

// Scatter-adds col (laid out as in im2col) back into sample n of dx.
template <typename T>
void col2im_add(const Conv2dShape& s, std::size_t n, const T* col, T* dx) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), P = oh_n * ow_n;
  for (std::size_t ic = 0; ic < s.in_ch; ++ic) {
    T* di = dx + (n * s.in_ch + ic) * s.in_h * s.in_w;
    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
      for (std::size_t kw = 0; kw < s.k_w; ++kw) {
        const T* cr = col + ((ic * s.k_h + kh) * s.k_w + kw) * P;
        std::size_t lo, hi;
        tap_range(ow_n, s.in_w, s.stride_w, s.pad_w, kw, &lo, &hi);
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const long long ih = static_cast<long long>(oh * s.stride_h + kh) -
                               static_cast<long long>(s.pad_h);
          if (ih < 0 || ih >= static_cast<long long>(s.in_h)) continue;
          T* dr = di + ih * static_cast<long long>(s.in_w) + static_cast<long long>(kw) -
                  static_cast<long long>(s.pad_w);
          const T* row = cr + oh * ow_n;
          for (std::size_t ow = lo; ow < hi; ++ow) dr[ow * s.stride_w] += row[ow];
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch(std::size_t size) {
  thread_local std::vector<T> buf;
  buf.resize(size);
  return buf;
}

template <typename T>
void conv_fwd_sample(const Conv2dShape& s, std::size_t n, const T* x,
                     const T* w, T* y) {
  const std::size_t P = s.out_h() * s.out_w(), R = s.in_ch * s.k_h * s.k_w;
  auto& col = scratch<T>(R * P);
  im2col(s, n, x, col.data());
  for (std::size_t oc = 0; oc < s.out_ch; ++oc) {
    T* yo = y + (n * s.out_ch + oc) * P;
    std::fill(yo, yo + P, T(0));
    const T* wr = w + oc * R;
    for (std::size_t r = 0; r < R; ++r) {
      const T wv = wr[r];
      const T* cr = col.data() + r * P;
      for (std::size_t p = 0; p < P; ++p) yo[p] += wv * cr[p];
    }
  }
}

template <typename T>
void conv_bwd_input_sample(const Conv2dShape& s, std::size_t n, const T* dy,
                           const T* w, T* dx) {
  const std::size_t P = s.out_h() * s.out_w(), R = s.in_ch * s.k_h * s.k_w;
  auto& dcol = scratch<T>(R * P);
  std::fill(dcol.begin(), dcol.end(), T(0));
  for (std::size_t oc = 0; oc < s.out_ch; ++oc) {
    const T* dyo = dy + (n * s.out_ch + oc) * P;
    const T* wr = w + oc * R;
    for (std::size_t r = 0; r < R; ++r) {
      const T wv = wr[r];
      T* cr = dcol.data() + r * P;
      for (std::size_t p = 0; p < P; ++p) cr[p] += wv * dyo[p];
    }
  }
  T* dxn = dx + n * s.in_ch * s.in_h * s.in_w;
  std::fill(dxn, dxn + s.in_ch * s.in_h * s.in_w, T(0));
  col2im_add(s, n, dcol.data(), dx);
}

// Dot product with eight fixed accumulation lanes: a deterministic order
// the compiler is still free to vectorise.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  for (; i < n; ++i) lanes[i % 8] += a[i] * b[i];
  return ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
}

// Adds sample n's contribution to dw for output channels [o0, o1). Every
// dw element sums its per-sample dot products in sample order.
template <typename T>
void conv_bwd_weight_sample(const Conv2dShape& s, std::size_t n, const T* col,
                            const T* dy, T* dw, std::size_t o0, std::size_t o1) {
  const std::size_t P = s.out_h() * s.out_w(), R = s.in_ch * s.k_h * s.k_w;
  for (std::size_t oc = o0; oc < o1; ++oc) {
    const T* dyo = dy + (n * s.out_ch + oc) * P;
    T* dwr = dw + oc * R;
    for (std::size_t r = 0; r < R; ++r) dwr[r] += lane_dot(dyo, col + r * P, P);
  }
}

template <typename T>
void matmul_row(std::size_t row, std::size_t k, std::size_t n, const T* a,
                const T* b, T* c) {
  T* cr = c + row * n;
  std::fill(cr, cr + n, T(0));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T av = a[row * k + kk];
    const T* br = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

template <typename T>
void matmul_at_b_row(std::size_t row, std::size_t m, std::size_t k,
                     std::size_t n, const T* a, const T* b, T* c) {
  T* cr = c + row * n;
  std::fill(cr, cr + n, T(0));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T av = a[kk * m + row];
    const T* br = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

template <typename T>
void matmul_a_bt_row(std::size_t row, std::size_t k, std::size_t n, const T* a,
                     const T* b, T* c) {
  const T* ar = a + row * k;
  for (std::size_t j = 0; j < n; ++j) {
    const T* br = b + j * k;
    T acc = 0;
    for (std::size_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
    c[row * n + j] = acc;
  }
}

inline double sq_norm(const double* v, std::size_t d) {
  double acc = 0;
  for (std::size_t i = 0; i < d; ++i) acc += v[i] * v[i];
  return acc;
}

inline void cosine_row(std::size_t i, std::size_t j_n, std::size_t d,
                       const double* z, const double* c, const double* c_sq,
                       double* s) {
  const double* zi = z + i * d;
  const double z_sq = sq_norm(zi, d);
  for (std::size_t j = 0; j < j_n; ++j) {
    const double* cj = c + j * d;
    double dot = 0;
    for (std::size_t t = 0; t < d; ++t) dot += zi[t] * cj[t];
    double v = 0;
    // sqrt(fl(a*a)) == a in IEEE arithmetic, so cos(c, c) is exactly 1.
    if (z_sq > 0 && c_sq[j] > 0) v = dot / std::sqrt(z_sq * c_sq[j]);
    s[i * j_n + j] = std::clamp(v, -1.0, 1.0);
  }
}

inline void nearest_row(std::size_t i, std::size_t k, std::size_t d,
                        const double* p, const double* c, std::size_t* assign,
                        double* dist) {
  const double* pi = p + i * d;
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double* cj = c + j * d;
    double acc = 0;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = pi[t] - cj[t];
      acc += diff * diff;
    }
    if (acc < best) {
      best = acc;
      arg = j;
    }
  }
  assign[i] = arg;
  dist[i] = best;
}

std::vector<double> row_sq_norms(std::size_t n, std::size_t d, const double* c) {
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = sq_norm(c + j * d, d);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
namespace serial {

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x,
                    std::span<const T> w, std::span<T> y) {
  for (std::size_t n = 0; n < s.batch; ++n)
    conv_fwd_sample(s, n, x.data(), w.data(), y.data());
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx) {
  for (std::size_t n = 0; n < s.batch; ++n)
    conv_bwd_input_sample(s, n, dy.data(), w.data(), dx.data());
}

template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw) {
  const std::size_t R = s.in_ch * s.k_h * s.k_w;
  auto& col = scratch<T>(R * s.out_h() * s.out_w());
  std::fill(dw.begin(), dw.begin() + static_cast<long>(s.out_ch * R), T(0));
  for (std::size_t n = 0; n < s.batch; ++n) {
    im2col(s, n, x.data(), col.data());
    conv_bwd_weight_sample(s, n, col.data(), dy.data(), dw.data(), 0, s.out_ch);
  }
}

template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
            std::span<const T> b, std::span<T> c) {
  for (std::size_t r = 0; r < m; ++r) matmul_row(r, k, n, a.data(), b.data(), c.data());
}

template <typename T>
void matmul_at_b(std::size_t m, std::size_t k, std::size_t n,
                 std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t r = 0; r < m; ++r)
    matmul_at_b_row(r, m, k, n, a.data(), b.data(), c.data());
}

template <typename T>
void matmul_a_bt(std::size_t m, std::size_t k, std::size_t n,
                 std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t r = 0; r < m; ++r)
    matmul_a_bt_row(r, k, n, a.data(), b.data(), c.data());
}

void cosine_matrix(std::size_t n, std::size_t j, std::size_t d,
                   std::span<const double> z, std::span<const double> c,
                   std::span<double> s) {
  const auto c_sq = row_sq_norms(j, d, c.data());
  for (std::size_t i = 0; i < n; ++i)
    cosine_row(i, j, d, z.data(), c.data(), c_sq.data(), s.data());
}

void nearest_centroid(std::size_t n, std::size_t k, std::size_t d,
                      std::span<const double> points,
                      std::span<const double> centroids,
                      std::span<std::size_t> assign, std::span<double> sq_dist) {
  for (std::size_t i = 0; i < n; ++i)
    nearest_row(i, k, d, points.data(), centroids.data(), assign.data(),
                sq_dist.data());
}

}  // namespace serial

// ---------------------------------------------------------------------------
namespace parallel {

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x,
                    std::span<const T> w, std::span<T> y) {
  const long long nb = static_cast<long long>(s.batch);
#pragma omp parallel for schedule(static)
  for (long long n = 0; n < nb; ++n)
    conv_fwd_sample(s, static_cast<std::size_t>(n), x.data(), w.data(), y.data());
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx) {
  const long long nb = static_cast<long long>(s.batch);
#pragma omp parallel for schedule(static)
  for (long long n = 0; n < nb; ++n)
    conv_bwd_input_sample(s, static_cast<std::size_t>(n), dy.data(), w.data(),
                          dx.data());
}

template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw) {
  const std::size_t R = s.in_ch * s.k_h * s.k_w, per = R * s.out_h() * s.out_w();
  std::vector<T> cols(s.batch * per);
  const long long nb = static_cast<long long>(s.batch);
#pragma omp parallel for schedule(static)
  for (long long n = 0; n < nb; ++n)
    im2col(s, static_cast<std::size_t>(n), x.data(), cols.data() + n * per);
  std::fill(dw.begin(), dw.begin() + static_cast<long>(s.out_ch * R), T(0));
  // Threads own disjoint output-channel blocks and walk the batch in order.
#pragma omp parallel
  {
    const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
    const std::size_t t = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t o0 = s.out_ch * t / nt, o1 = s.out_ch * (t + 1) / nt;
    for (std::size_t n = 0; n < s.batch; ++n)
      conv_bwd_weight_sample(s, n, cols.data() + n * per, dy.data(), dw.data(), o0, o1);
  }
}

template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
            std::span<const T> b, std::span<T> c) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < rows; ++r)
    matmul_row(static_cast<std::size_t>(r), k, n, a.data(), b.data(), c.data());
}

template <typename T>
void matmul_at_b(std::size_t m, std::size_t k, std::size_t n,
                 std::span<const T> a, std::span<const T> b, std::span<T> c) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < rows; ++r)
    matmul_at_b_row(static_cast<std::size_t>(r), m, k, n, a.data(), b.data(),
                    c.data());
}

template <typename T>
void matmul_a_bt(std::size_t m, std::size_t k, std::size_t n,
                 std::span<const T> a, std::span<const T> b, std::span<T> c) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < rows; ++r)
    matmul_a_bt_row(static_cast<std::size_t>(r), k, n, a.data(), b.data(),
                    c.data());
}

void cosine_matrix(std::size_t n, std::size_t j, std::size_t d,
                   std::span<const double> z, std::span<const double> c,
                   std::span<double> s) {
  const auto c_sq = row_sq_norms(j, d, c.data());
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i)
    cosine_row(static_cast<std::size_t>(i), j, d, z.data(), c.data(),
               c_sq.data(), s.data());
}

void nearest_centroid(std::size_t n, std::size_t k, std::size_t d,
                      std::span<const double> points,
                      std::span<const double> centroids,
                      std::span<std::size_t> assign, std::span<double> sq_dist) {
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i)
    nearest_row(static_cast<std::size_t>(i), k, d, points.data(),
                centroids.data(), assign.data(), sq_dist.data());
}

}  // namespace parallel

#define ASD_INSTANTIATE(NS, T)                                                 \
  template void NS::conv2d_forward<T>(const Conv2dShape&, std::span<const T>,  \
                                      std::span<const T>, std::span<T>);       \
  template void NS::conv2d_backward_input<T>(                                  \
      const Conv2dShape&, std::span<const T>, std::span<const T>,              \
      std::span<T>);                                                           \
  template void NS::conv2d_backward_weight<T>(                                 \
      const Conv2dShape&, std::span<const T>, std::span<const T>,              \
      std::span<T>);                                                           \
  template void NS::matmul<T>(std::size_t, std::size_t, std::size_t,           \
                              std::span<const T>, std::span<const T>,          \
                              std::span<T>);                                   \
  template void NS::matmul_at_b<T>(std::size_t, std::size_t, std::size_t,      \
                                   std::span<const T>, std::span<const T>,     \
                                   std::span<T>);                              \
  template void NS::matmul_a_bt<T>(std::size_t, std::size_t, std::size_t,      \
                                   std::span<const T>, std::span<const T>,     \
                                   std::span<T>);

ASD_INSTANTIATE(serial, float)
ASD_INSTANTIATE(serial, double)
ASD_INSTANTIATE(parallel, float)
ASD_INSTANTIATE(parallel, double)

#undef ASD_INSTANTIATE

}  // namespace asd::kernels
