// include/asd/kernels/kernels.hpp

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

// Dense compute kernels used by the autodiff engine and the scorer.
//
// Every kernel exists twice: `serial::` is the reference, `parallel::` splits
// the outermost independent loop across OpenMP threads. Both call the same
// per-slice body, so the accumulation order of every output element is the
// same and the two variants are bit-identical. Tests rely on that.

#pragma once

#include <cstddef>
#include <span>

namespace asd::kernels {

/// NCHW convolution geometry. A 1D convolution is the special case
/// in_h = k_h = stride_h = 1, pad_h = 0.
struct Conv2dShape {
  std::size_t batch = 1;
  std::size_t in_ch = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_ch = 1;
  std::size_t k_h = 1;
  std::size_t k_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  std::size_t out_h() const { return (in_h + 2 * pad_h - k_h) / stride_h + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad_w - k_w) / stride_w + 1; }
  std::size_t input_size() const { return batch * in_ch * in_h * in_w; }
  std::size_t weight_size() const { return out_ch * in_ch * k_h * k_w; }
  std::size_t output_size() const { return batch * out_ch * out_h() * out_w(); }
};

#define ASD_DECLARE_KERNELS(NS)                                                \
  namespace NS {                                                               \
  template <typename T>                                                        \
  void conv2d_forward(const Conv2dShape& s, std::span<const T> x,              \
                      std::span<const T> w, std::span<T> y);                   \
  template <typename T>                                                        \
  void conv2d_backward_input(const Conv2dShape& s, std::span<const T> dy,      \
                             std::span<const T> w, std::span<T> dx);           \
  template <typename T>                                                        \
  void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x,      \
                              std::span<const T> dy, std::span<T> dw);         \
  /* c[m,n] = sum_k a[m,k] b[k,n] */                                           \
  template <typename T>                                                        \
  void matmul(std::size_t m, std::size_t k, std::size_t n,                     \
              std::span<const T> a, std::span<const T> b, std::span<T> c);     \
  /* c[m,n] = sum_k a[k,m] b[k,n] */                                           \
  template <typename T>                                                        \
  void matmul_at_b(std::size_t m, std::size_t k, std::size_t n,                \
                   std::span<const T> a, std::span<const T> b,                 \
                   std::span<T> c);                                            \
  /* c[m,n] = sum_k a[m,k] b[n,k] */                                           \
  template <typename T>                                                        \
  void matmul_a_bt(std::size_t m, std::size_t k, std::size_t n,                \
                   std::span<const T> a, std::span<const T> b,                 \
                   std::span<T> c);                                            \
  /* s[i,j] = cos(z_i, c_j); rows with zero norm give 0 */                     \
  void cosine_matrix(std::size_t n, std::size_t j, std::size_t d,              \
                     std::span<const double> z, std::span<const double> c,     \
                     std::span<double> s);                                     \
  /* nearest centroid by squared Euclidean distance; ties -> lowest index */   \
  void nearest_centroid(std::size_t n, std::size_t k, std::size_t d,           \
                        std::span<const double> points,                        \
                        std::span<const double> centroids,                     \
                        std::span<std::size_t> assign,                         \
                        std::span<double> sq_dist);                            \
  }

ASD_DECLARE_KERNELS(serial)
ASD_DECLARE_KERNELS(parallel)

#undef ASD_DECLARE_KERNELS

}  // namespace asd::kernels
