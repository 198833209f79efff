// tests/unit/autodiff_test.cpp

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

#include <cmath>
#include <functional>
#include <random>

#include "asd/autodiff/graph.hpp"
#include "asd/autodiff/optim.hpp"

using namespace asd;
using namespace asd::ad;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Builds a scalar graph from a leaf and compares the backward gradient with
// central differences of the same graph.
double grad_error(const Tensor<double>& x0,
                  const std::function<Var<double>(const Var<double>&)>& build) {
  auto x = leaf(x0, "x");
  auto loss = build(x);
  backward(loss);
  auto f = [&](const Tensor<double>& t) { return build(constant(t)).item(); };
  auto fd = finite_diff<double>(f, x0, 1e-6);
  return max_relative_error(x.grad(), fd, 1e-6);
}

}  // namespace

TEST_CASE("square of a scalar") {
  auto w = leaf(Tensor<double>::scalar(3.0), "w");
  auto y = mul(w, w);
  backward(y);
  CHECK(y.item() == 9.0);
  CHECK(w.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("relu gradient is the step function") {
  auto x = leaf(Tensor<double>(Shape{2}, std::vector<double>{-1.0, 2.0}));
  backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("finite differences of x^2") {
  std::function<double(const Tensor<double>&)> f = [](const Tensor<double>& t) {
    return t[0] * t[0];
  };
  auto g = finite_diff<double>(f, Tensor<double>::scalar(3.0), 1e-4);
  CHECK(std::abs(g[0] - 6.0) < 1e-6);
}

TEST_CASE("finite differences reject eps <= 0 and vanish on constants") {
  std::function<double(const Tensor<double>&)> c = [](const Tensor<double>&) { return 4.0; };
  const Tensor<double> x(Shape{3}, std::vector<double>{1, -2, 0.5});
  for (double v : finite_diff<double>(c, x, 1e-3).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(finite_diff<double>(c, x, 0.0), InvalidArgument);
  CHECK_THROWS_AS(finite_diff<double>(c, x, -1e-3), InvalidArgument);
}

TEST_CASE("gradients of every op agree with finite differences") {
  Rng rng(7);
  auto c = constant(random_tensor({3, 4}, rng));
  auto bias = constant(random_tensor({4}, rng));

  SUBCASE("elementwise") {
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            return sum(mul(add(x, c), sub(scale(x, 2.0), add_scalar(c, 0.5))));
          }) < 1e-6);
  }
  SUBCASE("matmul variants and bias") {
    auto b = constant(random_tensor({4, 5}, rng));
    auto bt = constant(random_tensor({5, 4}, rng));
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            auto y = add(matmul(x, b), matmul_bt(x, bt));
            return mean(mul(y, y));
          }) < 1e-6);
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            auto y = add_row_bias(x, bias);
            return sum(mul(y, y));
          }) < 1e-6);
  }
  SUBCASE("normalize, dot, logsumexp") {
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            auto n = l2_normalize_rows(x);
            return add(sum(rowwise_dot(n, c)), sum(logsumexp_rows(scale(x, 3.0))));
          }) < 1e-6);
  }
  SUBCASE("cross entropy with soft targets") {
    Tensor<double> t(Shape{3, 4});
    for (std::size_t r = 0; r < 3; ++r) {
      t[r * 4 + r] = 0.7;
      t[r * 4 + 3] += 0.3;
    }
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            return softmax_cross_entropy(x, t);
          }) < 1e-6);
  }
  SUBCASE("concat, slice, gather, reshape") {
    CHECK(grad_error(random_tensor({3, 4}, rng), [&](const Var<double>& x) {
            auto y = concat_cols<double>({x, slice_cols(x, 1, 3)});
            auto g = gather_rows(y, {2, 0, 2});
            auto r = reshape(g, Shape{18});
            return sum(mul(r, r));
          }) < 1e-6);
  }
  SUBCASE("conv2d with stride and padding") {
    auto w = constant(random_tensor({3, 2, 3, 3}, rng));
    CHECK(grad_error(random_tensor({2, 2, 5, 6}, rng), [&](const Var<double>& x) {
            auto y = conv2d(x, w, 2, 1);
            return sum(mul(y, y));
          }) < 1e-6);
    auto xin = constant(random_tensor({2, 2, 5, 6}, rng));
    CHECK(grad_error(random_tensor({3, 2, 3, 3}, rng), [&](const Var<double>& wv) {
            auto y = conv2d(xin, wv, 1, 1);
            return sum(mul(y, y));
          }) < 1e-6);
  }
  SUBCASE("conv1d") {
    auto w = constant(random_tensor({4, 2, 3}, rng));
    CHECK(grad_error(random_tensor({2, 2, 9}, rng), [&](const Var<double>& x) {
            auto y = conv1d(x, w, 2, 1);
            return sum(mul(y, y));
          }) < 1e-6);
  }
  SUBCASE("batch norm in training mode and pooling") {
    auto gamma = constant(random_tensor({3}, rng, 0.5, 1.5));
    auto beta = constant(random_tensor({3}, rng));
    auto probe = constant(random_tensor({4, 3}, rng));
    CHECK(grad_error(random_tensor({4, 3, 2, 2}, rng), [&](const Var<double>& x) {
            BatchNormStats<double> st(3);
            auto y = global_avg_pool(batch_norm(x, gamma, beta, st, true));
            return sum(mul(y, probe));
          }) < 1e-5);
  }
}

TEST_CASE("shared subexpressions accumulate gradient") {
  auto x = leaf(Tensor<double>::scalar(2.0));
  auto y = mul(x, x);
  backward(add(y, y));  // 2 x^2
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("backward rejects non-scalar losses and non-finite gradients") {
  auto x = leaf(Tensor<double>(Shape{2}, 1.0));
  CHECK_THROWS_AS(backward(x), InvalidArgument);

  auto z = leaf(Tensor<double>(Shape{1, 2}, 0.0));
  CHECK_THROWS_AS(backward(sum(l2_normalize_rows(z, 0.0))), NumericError);
}

TEST_CASE("shape mismatches throw") {
  auto a = leaf(Tensor<double>(Shape{2, 3}));
  auto b = leaf(Tensor<double>(Shape{3, 2}));
  CHECK_THROWS_AS(add(a, b), InvalidArgument);
  CHECK_THROWS_AS(matmul(a, a), InvalidArgument);
  CHECK_THROWS_AS((Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3})), InvalidArgument);
}

TEST_CASE("adamw first step moves by lr") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>::scalar(1.0));
  std::map<std::string, Tensor<double>> g{{"w", Tensor<double>::scalar(0.0)}};

  SUBCASE("zero gradient leaves only weight decay") {
    adamw_step(ps, g, AdamWConfig{1e-3, 1e-2});
    CHECK(ps.get("w").value()[0] == doctest::Approx(0.99999).epsilon(1e-12));
  }
  SUBCASE("unit gradient, no decay") {
    g["w"][0] = 1.0;
    adamw_step(ps, g, AdamWConfig{1e-3, 0.0});
    // m_hat = 1, v_hat = 1 -> step of lr / (1 + eps)
    CHECK(ps.get("w").value()[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)));
  }
}

TEST_CASE("adamw without gradient or decay is a no-op") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>(Shape{3}, std::vector<double>{0.7, -1.5, 2.0}));
  std::map<std::string, Tensor<double>> g{{"w", Tensor<double>(Shape{3})}};
  for (int t = 0; t < 4; ++t) adamw_step(ps, g, AdamWConfig{1e-2, 0.0});
  CHECK(ps.get("w").value().data == std::vector<double>{0.7, -1.5, 2.0});
}

TEST_CASE("adamw matches a scalar reference over several steps") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>(Shape{2}, std::vector<double>{0.5, -2.0}));
  ps.add("frozen", Tensor<double>::scalar(3.0), false);
  const AdamWConfig cfg{0.01, 0.1, 0.9, 0.999, 1e-8};
  double p[2] = {0.5, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    std::map<std::string, Tensor<double>> g{
        {"w", Tensor<double>(Shape{2}, std::vector<double>{0.3 * t, -1.0 / t})},
        {"frozen", Tensor<double>::scalar(1.0)}};
    adamw_step(ps, g, cfg);
    for (int i = 0; i < 2; ++i) {
      const double gi = g["w"][i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      p[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * p[i]);
    }
  }
  CHECK(ps.get("w").value()[0] == doctest::Approx(p[0]).epsilon(1e-12));
  CHECK(ps.get("w").value()[1] == doctest::Approx(p[1]).epsilon(1e-12));
  CHECK(ps.get("frozen").value()[0] == 3.0);
}

TEST_CASE("clone does not share parameter storage") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>::scalar(1.0));
  auto copy = ps.clone();
  copy.get("w").mutable_value()[0] = 5.0;
  CHECK(ps.get("w").value()[0] == 1.0);
}
