// bench/kernels_bench.cpp

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

// Serial reference vs OpenMP kernels. Both variants produce identical bits;
// this measures only what the thread split buys.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "asd/kernels/kernels.hpp"

namespace k = asd::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 g(seed);
  std::normal_distribution<double> d;
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(g));
  return v;
}

k::Conv2dShape conv_shape(std::size_t batch) {
  k::Conv2dShape s;
  s.batch = batch;
  s.in_ch = 16;
  s.in_h = s.in_w = 32;
  s.out_ch = 32;
  s.k_h = s.k_w = 3;
  s.stride_h = s.stride_w = 2;
  s.pad_h = s.pad_w = 1;
  return s;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& st) {
  const auto s = conv_shape(static_cast<std::size_t>(st.range(0)));
  const auto x = random_vec<float>(s.input_size(), 1);
  const auto w = random_vec<float>(s.weight_size(), 2);
  std::vector<float> y(s.output_size());
  for (auto _ : st) {
    if constexpr (Parallel) k::parallel::conv2d_forward<float>(s, x, w, y);
    else k::serial::conv2d_forward<float>(s, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Conv2dBackwardWeight(benchmark::State& st) {
  const auto s = conv_shape(static_cast<std::size_t>(st.range(0)));
  const auto x = random_vec<float>(s.input_size(), 1);
  const auto dy = random_vec<float>(s.output_size(), 3);
  std::vector<float> dw(s.weight_size());
  for (auto _ : st) {
    if constexpr (Parallel) k::parallel::conv2d_backward_weight<float>(s, x, dy, dw);
    else k::serial::conv2d_backward_weight<float>(s, x, dy, dw);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_vec<float>(n * n, 4);
  const auto b = random_vec<float>(n * n, 5);
  std::vector<float> c(n * n);
  for (auto _ : st) {
    if constexpr (Parallel) k::parallel::matmul<float>(n, n, n, a, b, c);
    else k::serial::matmul<float>(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

template <bool Parallel>
void BM_CosineMatrix(benchmark::State& st) {
  const std::size_t n = static_cast<std::size_t>(st.range(0)), j = 26, d = 384;
  const auto z = random_vec<double>(n * d, 6);
  const auto c = random_vec<double>(j * d, 7);
  std::vector<double> s(n * j);
  for (auto _ : st) {
    if constexpr (Parallel) k::parallel::cosine_matrix(n, j, d, z, c, s);
    else k::serial::cosine_matrix(n, j, d, z, c, s);
    benchmark::DoNotOptimize(s.data());
  }
}

}  // namespace

BENCHMARK(BM_Conv2dForward<false>)->Arg(8)->Arg(64);
BENCHMARK(BM_Conv2dForward<true>)->Arg(8)->Arg(64);
BENCHMARK(BM_Conv2dBackwardWeight<false>)->Arg(8)->Arg(64);
BENCHMARK(BM_Conv2dBackwardWeight<true>)->Arg(8)->Arg(64);
BENCHMARK(BM_Matmul<false>)->Arg(128)->Arg(384);
BENCHMARK(BM_Matmul<true>)->Arg(128)->Arg(384);
BENCHMARK(BM_CosineMatrix<false>)->Arg(400);
BENCHMARK(BM_CosineMatrix<true>)->Arg(400);

BENCHMARK_MAIN();
