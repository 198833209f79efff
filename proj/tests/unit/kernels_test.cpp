// tests/unit/kernels_test.cpp

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

#include <doctest.h>

#include <random>

#include "asd/common.hpp"
#include "asd/kernels/kernels.hpp"

using namespace asd;
using namespace asd::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Direct seven-loop convolution.
std::vector<double> naive_conv(const Conv2dShape& s, const std::vector<double>& x,
                               const std::vector<double>& w) {
  std::vector<double> y(s.output_size(), 0.0);
  const std::size_t oh = s.out_h(), ow = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t o = 0; o < s.out_ch; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < s.in_ch; ++c)
            for (std::size_t a = 0; a < s.k_h; ++a)
              for (std::size_t b = 0; b < s.k_w; ++b) {
                const long r = long(i * s.stride_h + a) - long(s.pad_h);
                const long q = long(j * s.stride_w + b) - long(s.pad_w);
                if (r < 0 || q < 0 || r >= long(s.in_h) || q >= long(s.in_w)) continue;
                acc += x[((n * s.in_ch + c) * s.in_h + r) * s.in_w + q] *
                       w[((o * s.in_ch + c) * s.k_h + a) * s.k_w + b];
              }
          y[((n * s.out_ch + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv kernels match a direct convolution and its adjoints") {
  Rng rng(3);
  const Conv2dShape shapes[] = {
      {2, 3, 7, 9, 4, 3, 3, 2, 2, 1, 1},
      {1, 2, 5, 5, 3, 3, 3, 1, 1, 1, 1},
      {3, 2, 1, 17, 5, 1, 3, 1, 2, 0, 1},  // 1-D case
  };
  for (const auto& s : shapes) {
    auto x = random_vec(s.input_size(), rng);
    auto w = random_vec(s.weight_size(), rng);
    auto dy = random_vec(s.output_size(), rng);
    auto ref = naive_conv(s, x, w);

    std::vector<double> y(s.output_size()), yp(s.output_size());
    serial::conv2d_forward<double>(s, x, w, y);
    parallel::conv2d_forward<double>(s, x, w, yp);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(y == yp);

    // <conv(x), dy> = <x, conv^T_x(dy)> = <w, conv^T_w(dy)>
    std::vector<double> dx(s.input_size()), dxp(s.input_size());
    std::vector<double> dw(s.weight_size()), dwp(s.weight_size());
    serial::conv2d_backward_input<double>(s, dy, w, dx);
    parallel::conv2d_backward_input<double>(s, dy, w, dxp);
    serial::conv2d_backward_weight<double>(s, x, dy, dw);
    parallel::conv2d_backward_weight<double>(s, x, dy, dwp);
    const double lhs = dot(ref, dy);
    CHECK(dot(x, dx) == doctest::Approx(lhs).epsilon(1e-10));
    CHECK(dot(w, dw) == doctest::Approx(lhs).epsilon(1e-10));
    CHECK(dx == dxp);
    CHECK(dw == dwp);
  }
}

TEST_CASE("matmul family agrees with index-based oracles") {
  Rng rng(5);
  const std::size_t m = 5, k = 7, n = 3;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  auto at = random_vec(k * m, rng);
  auto bt = random_vec(n * k, rng);
  std::vector<double> c(m * n), cp(m * n);

  serial::matmul<double>(m, k, n, a, b, c);
  parallel::matmul<double>(m, k, n, a, b, cp);
  CHECK(c == cp);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < k; ++q) s += a[i * k + q] * b[q * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }

  serial::matmul_at_b<double>(m, k, n, at, b, c);
  parallel::matmul_at_b<double>(m, k, n, at, b, cp);
  CHECK(c == cp);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < k; ++q) s += at[q * m + i] * b[q * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }

  serial::matmul_a_bt<double>(m, k, n, a, bt, c);
  parallel::matmul_a_bt<double>(m, k, n, a, bt, cp);
  CHECK(c == cp);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < k; ++q) s += a[i * k + q] * bt[j * k + q];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("cosine matrix and nearest centroid") {
  std::vector<double> z{1, 0, 0, 0, 3, 4};
  std::vector<double> c{0, 1, 1, 1};
  std::vector<double> s(6), sp(6);
  serial::cosine_matrix(3, 2, 2, z, c, s);
  parallel::cosine_matrix(3, 2, 2, z, c, sp);
  CHECK(s == sp);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(s[2] == 0.0);  // zero row
  CHECK(s[3] == 0.0);
  CHECK(s[4] == doctest::Approx(0.8));

  // Point 1 is equidistant from both centroids and must go to index 0.
  std::vector<double> pts{0, 0, 1, 0, 5, 5};
  std::vector<double> cen{0, 0, 2, 0};
  std::vector<std::size_t> as(3), asp(3);
  std::vector<double> d(3), dp(3);
  serial::nearest_centroid(3, 2, 2, pts, cen, as, d);
  parallel::nearest_centroid(3, 2, 2, pts, cen, asp, dp);
  CHECK(as == asp);
  CHECK(d == dp);
  CHECK(as == std::vector<std::size_t>{0, 0, 1});
  CHECK(d[2] == doctest::Approx(34.0));
}
