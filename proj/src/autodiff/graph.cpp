// src/autodiff/graph.cpp

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

#include "asd/autodiff/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "asd/kernels/kernels.hpp"

namespace asd::ad {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
bool Tensor<T>::all_finite() const {
  // v - v is 0 for finite v and NaN otherwise; the sum vectorises.
  T acc = 0;
  for (T v : data) acc += v - v;
  return acc == T(0);
}

namespace {

std::atomic<std::uint64_t> g_next_id{1};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_node(Tensor<T> value, std::string op,
                     std::vector<NodePtr<T>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = std::move(op);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->parents = std::move(parents);
  return n;
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank)
    throw InvalidArgument(std::string(op) + ": expected rank " +
                          std::to_string(rank) + ", got " + shape_str(a.shape()));
}

template <typename T>
void accumulate(Node<T>& target, std::span<const T> g) {
  if (!target.requires_grad) return;
  auto& acc = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) acc.data[i] += g[i];
}

}  // namespace

template <typename T>
T Var<T>::item() const {
  if (node_->value.size() != 1)
    throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return node_->value.data[0];
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(make_node<T>(std::move(value), "constant", {}));
}

template <typename T>
Var<T> leaf(Tensor<T> value, std::string name) {
  auto n = make_node<T>(std::move(value), std::move(name), {});
  n->requires_grad = true;
  return Var<T>(n);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto n = make_node<T>(std::move(out), "add", {a.ptr(), b.ptr()});
  n->backward_fn = [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.span());
    accumulate<T>(*self.parents[1], self.grad.span());
  };
  return Var<T>(n);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto n = make_node<T>(std::move(out), "sub", {a.ptr(), b.ptr()});
  n->backward_fn = [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.span());
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& acc = pb.ensure_grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= self.grad[i];
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto n = make_node<T>(std::move(out), "mul", {a.ptr(), b.ptr()});
  n->backward_fn = [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& acc = pa.ensure_grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& acc = pb.ensure_grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += self.grad[i] * pa.value[i];
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  auto n = make_node<T>(std::move(out), "scale", {a.ptr()});
  n->backward_fn = [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& acc = pa.ensure_grad();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += self.grad[i] * s;
  };
  return Var<T>(n);
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
  auto n = make_node<T>(std::move(out), "add_scalar", {a.ptr()});
  n->backward_fn = [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.span());
  };
  return Var<T>(n);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  auto n = make_node<T>(std::move(out), "relu", {a.ptr()});
  n->backward_fn = [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& acc = pa.ensure_grad();
    for (std::size_t i = 0; i < acc.size(); ++i)
      if (pa.value[i] > T(0)) acc[i] += self.grad[i];
  };
  return Var<T>(n);
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data) acc += v;
  auto n = make_node<T>(Tensor<T>::scalar(acc), "sum", {a.ptr()});
  n->backward_fn = [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.ensure_grad();
    for (auto& v : g.data) v += self.grad[0];
  };
  return Var<T>(n);
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T inv = T(1) / static_cast<T>(a.size());
  return scale(sum(a), inv);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw InvalidArgument("reshape: " + shape_str(a.shape()) + " -> " +
                          shape_str(shape));
  Tensor<T> out(std::move(shape), a.value().data);
  auto n = make_node<T>(std::move(out), "reshape", {a.ptr()});
  n->backward_fn = [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.span());
  };
  return Var<T>(n);
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
  if (b.shape()[0] != k)
    throw InvalidArgument("matmul: inner dims " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  Tensor<T> out(Shape{m, nn});
  kernels::parallel::matmul<T>(m, k, nn, a.value().span(), b.value().span(),
                               out.span());
  auto n = make_node<T>(std::move(out), "matmul", {a.ptr(), b.ptr()});
  n->backward_fn = [m, k, nn](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      std::vector<T> tmp(m * k);
      kernels::parallel::matmul_a_bt<T>(m, nn, k, self.grad.span(),
                                        pb.value.span(), tmp);
      accumulate<T>(pa, tmp);
    }
    if (pb.requires_grad) {
      std::vector<T> tmp(k * nn);
      kernels::parallel::matmul_at_b<T>(k, m, nn, pa.value.span(),
                                        self.grad.span(), tmp);
      accumulate<T>(pb, tmp);
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], nn = b.shape()[0];
  if (b.shape()[1] != k)
    throw InvalidArgument("matmul_bt: inner dims " + shape_str(a.shape()) +
                          " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out(Shape{m, nn});
  kernels::parallel::matmul_a_bt<T>(m, k, nn, a.value().span(), b.value().span(),
                                    out.span());
  auto n = make_node<T>(std::move(out), "matmul_bt", {a.ptr(), b.ptr()});
  n->backward_fn = [m, k, nn](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      std::vector<T> tmp(m * k);
      kernels::parallel::matmul<T>(m, nn, k, self.grad.span(), pb.value.span(),
                                   tmp);
      accumulate<T>(pa, tmp);
    }
    if (pb.requires_grad) {
      std::vector<T> tmp(nn * k);
      kernels::parallel::matmul_at_b<T>(nn, m, k, self.grad.span(),
                                        pa.value.span(), tmp);
      accumulate<T>(pb, tmp);
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (bias.size() != cols)
    throw InvalidArgument("add_row_bias: bias " + shape_str(bias.shape()) +
                          " for input " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = x.value()[r * cols + c] + bias.value()[c];
  auto n = make_node<T>(std::move(out), "add_row_bias", {x.ptr(), bias.ptr()});
  n->backward_fn = [rows, cols](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.span());
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& acc = pb.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) acc[c] += self.grad[r * cols + c];
  };
  return Var<T>(n);
}

namespace {

template <typename T>
Var<T> conv_impl(const Var<T>& x, const Var<T>& w, const kernels::Conv2dShape& s,
                 Shape out_shape, const char* op) {
  if (s.in_w + 2 * s.pad_w < s.k_w || s.in_h + 2 * s.pad_h < s.k_h)
    throw InvalidArgument(std::string(op) + ": input " + shape_str(x.shape()) +
                          " smaller than kernel " + shape_str(w.shape()));
  Tensor<T> out(std::move(out_shape));
  kernels::parallel::conv2d_forward<T>(s, x.value().span(), w.value().span(),
                                       out.span());
  auto n = make_node<T>(std::move(out), op, {x.ptr(), w.ptr()});
  n->backward_fn = [s](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (px.requires_grad) {
      std::vector<T> tmp(s.input_size());
      kernels::parallel::conv2d_backward_input<T>(s, self.grad.span(),
                                                  pw.value.span(), tmp);
      accumulate<T>(px, tmp);
    }
    if (pw.requires_grad) {
      std::vector<T> tmp(s.weight_size());
      kernels::parallel::conv2d_backward_weight<T>(s, px.value.span(),
                                                   self.grad.span(), tmp);
      accumulate<T>(pw, tmp);
    }
  };
  return Var<T>(n);
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (x.shape()[1] != w.shape()[1])
    throw InvalidArgument("conv2d: channel mismatch " + shape_str(x.shape()) +
                          " vs weight " + shape_str(w.shape()));
  if (stride == 0) throw InvalidArgument("conv2d: stride must be positive");
  kernels::Conv2dShape s;
  s.batch = x.shape()[0];
  s.in_ch = x.shape()[1];
  s.in_h = x.shape()[2];
  s.in_w = x.shape()[3];
  s.out_ch = w.shape()[0];
  s.k_h = w.shape()[2];
  s.k_w = w.shape()[3];
  s.stride_h = s.stride_w = stride;
  s.pad_h = s.pad_w = pad;
  if (s.in_h + 2 * pad < s.k_h || s.in_w + 2 * pad < s.k_w)
    throw InvalidArgument("conv2d: input " + shape_str(x.shape()) +
                          " smaller than kernel " + shape_str(w.shape()));
  return conv_impl(x, w, s, Shape{s.batch, s.out_ch, s.out_h(), s.out_w()},
                   "conv2d");
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv1d");
  require_rank(w, 3, "conv1d");
  if (x.shape()[1] != w.shape()[1])
    throw InvalidArgument("conv1d: channel mismatch " + shape_str(x.shape()) +
                          " vs weight " + shape_str(w.shape()));
  if (stride == 0) throw InvalidArgument("conv1d: stride must be positive");
  kernels::Conv2dShape s;
  s.batch = x.shape()[0];
  s.in_ch = x.shape()[1];
  s.in_w = x.shape()[2];
  s.out_ch = w.shape()[0];
  s.k_w = w.shape()[2];
  s.stride_w = stride;
  s.pad_w = pad;
  if (s.in_w + 2 * pad < s.k_w)
    throw InvalidArgument("conv1d: input " + shape_str(x.shape()) +
                          " smaller than kernel " + shape_str(w.shape()));
  return conv_impl(x, w, s, Shape{s.batch, s.out_ch, s.out_w()}, "conv1d");
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& stats, bool training, T momentum, T eps) {
  if (x.shape().size() < 2) throw InvalidArgument("batch_norm: rank < 2");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t inner = x.size() / (batch * ch);
  if (gamma.size() != ch || beta.size() != ch || stats.mean.size() != ch)
    throw InvalidArgument("batch_norm: parameters sized for " +
                          std::to_string(gamma.size()) + " channels, input has " +
                          std::to_string(ch));
  const std::size_t count = batch * inner;
  const auto& xv = x.value().data;

  std::vector<T> mu(ch), invstd(ch);
  if (training) {
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double sq = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - m;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mu[c] = static_cast<T>(m);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased =
          count > 1 ? sq / static_cast<double>(count - 1) : var;
      stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * m);
      stats.var[c] =
          static_cast<T>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = stats.mean[c];
      invstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(stats.var[c]) + static_cast<double>(eps)));
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (n * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mu[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gamma.value()[c] * h + beta.value()[c];
      }
    }

  auto n = make_node<T>(std::move(out), training ? "batch_norm[train]" : "batch_norm[eval]",
                        {x.ptr(), gamma.ptr(), beta.ptr()});
  n->backward_fn = [xhat = std::move(xhat), invstd, batch, ch, inner, count,
                    training](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const auto& g = self.grad.data;
    std::vector<T> dgamma(ch, 0), dbeta(ch, 0);
    for (std::size_t c = 0; c < ch; ++c) {
      T sg = 0, sgx = 0;
      for (std::size_t nn = 0; nn < batch; ++nn) {
        const std::size_t base = (nn * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sg += g[base + i];
          sgx += g[base + i] * xhat[base + i];
        }
      }
      dgamma[c] = sgx;
      dbeta[c] = sg;
    }
    accumulate<T>(pg, dgamma);
    accumulate<T>(pb, dbeta);
    if (!px.requires_grad) return;
    auto& dx = px.ensure_grad();
    for (std::size_t c = 0; c < ch; ++c) {
      const T gam = pg.value[c];
      if (!training) {
        for (std::size_t nn = 0; nn < batch; ++nn) {
          const std::size_t base = (nn * ch + c) * inner;
          for (std::size_t i = 0; i < inner; ++i)
            dx[base + i] += g[base + i] * gam * invstd[c];
        }
        continue;
      }
      // dxhat = g * gamma; dx = invstd/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
      const T sum_dxhat = dbeta[c] * gam;
      const T sum_dxhat_xhat = dgamma[c] * gam;
      const T m = static_cast<T>(count);
      for (std::size_t nn = 0; nn < batch; ++nn) {
        const std::size_t base = (nn * ch + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const T dxhat = g[base + i] * gam;
          dx[base + i] += invstd[c] / m *
                          (m * dxhat - sum_dxhat - xhat[base + i] * sum_dxhat_xhat);
        }
      }
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  if (x.shape().size() < 3) throw InvalidArgument("global_avg_pool: rank < 3");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t inner = x.size() / (batch * ch);
  Tensor<T> out(Shape{batch, ch});
  for (std::size_t r = 0; r < batch * ch; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += x.value()[r * inner + i];
    out[r] = acc / static_cast<T>(inner);
  }
  auto n = make_node<T>(std::move(out), "global_avg_pool", {x.ptr()});
  n->backward_fn = [batch, ch, inner](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.ensure_grad();
    const T inv = T(1) / static_cast<T>(inner);
    for (std::size_t r = 0; r < batch * ch; ++r)
      for (std::size_t i = 0; i < inner; ++i) dx[r * inner + i] += self.grad[r] * inv;
  };
  return Var<T>(n);
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t i = 0; i < d; ++i) sq += x.value()[r * d + i] * x.value()[r * d + i];
    norms[r] = std::max(std::sqrt(sq), eps);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = x.value()[r * d + i] / norms[r];
  }
  auto n = make_node<T>(std::move(out), "l2_normalize_rows", {x.ptr()});
  n->backward_fn = [norms, rows, d, eps](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data.data() + r * d;
      const T* g = self.grad.data.data() + r * d;
      T gy = 0;
      if (norms[r] > eps)
        for (std::size_t i = 0; i < d; ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += (g[i] - y[i] * gy) / norms[r];
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "rowwise_dot");
  require_same_shape(a, b, "rowwise_dot");
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  Tensor<T> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += a.value()[r * d + i] * b.value()[r * d + i];
    out[r] = acc;
  }
  auto n = make_node<T>(std::move(out), "rowwise_dot", {a.ptr(), b.ptr()});
  n->backward_fn = [rows, d](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) g[r * d + i] += self.grad[r] * pb.value[r * d + i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) g[r * d + i] += self.grad[r] * pa.value[r * d + i];
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> logsumexp_rows(const Var<T>& x) {
  require_rank(x, 2, "logsumexp_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor<T> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.value().data.data() + r * cols;
    const T m = *std::max_element(p, p + cols);
    T acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(p[c] - m);
    out[r] = m + std::log(acc);
  }
  auto n = make_node<T>(std::move(out), "logsumexp_rows", {x.ptr()});
  n->backward_fn = [rows, cols](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        dx[r * cols + c] += self.grad[r] * std::exp(px.value[r * cols + c] - self.value[r]);
  };
  return Var<T>(n);
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  if (targets.shape != logits.shape())
    throw InvalidArgument("softmax_cross_entropy: targets " +
                          shape_str(targets.shape) + " for logits " +
                          shape_str(logits.shape()));
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  std::vector<T> lse(rows);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = logits.value().data.data() + r * cols;
    const T m = *std::max_element(p, p + cols);
    T acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(p[c] - m);
    lse[r] = m + std::log(acc);
    T row = 0;
    for (std::size_t c = 0; c < cols; ++c) row += targets[r * cols + c] * (lse[r] - p[c]);
    total += row;
  }
  auto n = make_node<T>(Tensor<T>::scalar(total / static_cast<T>(rows)),
                        "softmax_cross_entropy", {logits.ptr()});
  n->backward_fn = [targets, lse, rows, cols](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.ensure_grad();
    const T g = self.grad[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      T tsum = 0;
      for (std::size_t c = 0; c < cols; ++c) tsum += targets[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const T p = std::exp(px.value[r * cols + c] - lse[r]);
        dx[r * cols + c] += g * (p * tsum - targets[r * cols + c]);
      }
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != rows) throw InvalidArgument("concat_cols: row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
    parents.push_back(p.ptr());
  }
  Tensor<T> out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c)
        out[r * total + off + c] = parts[k].value()[r * widths[k] + c];
    off += widths[k];
  }
  auto n = make_node<T>(std::move(out), "concat_cols", std::move(parents));
  n->backward_fn = [widths, rows, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& pk = *self.parents[k];
      if (pk.requires_grad) {
        auto& g = pk.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c)
            g[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  };
  return Var<T>(n);
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (begin >= end || end > cols)
    throw InvalidArgument("slice_cols: bad range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") of " + std::to_string(cols));
  const std::size_t w = end - begin;
  Tensor<T> out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x.value()[r * cols + begin + c];
  auto n = make_node<T>(std::move(out), "slice_cols", {x.ptr()});
  n->backward_fn = [rows, cols, begin, w](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
  };
  return Var<T>(n);
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  if (x.shape().empty()) throw InvalidArgument("gather_rows: scalar input");
  const std::size_t n_rows = x.shape()[0];
  const std::size_t width = x.size() / std::max<std::size_t>(n_rows, 1);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows)
      throw InvalidArgument("gather_rows: index " + std::to_string(rows[i]) +
                            " out of " + std::to_string(n_rows));
    std::copy_n(x.value().data.begin() + rows[i] * width, width,
                out.data.begin() + i * width);
  }
  auto n = make_node<T>(std::move(out), "gather_rows", {x.ptr()});
  n->backward_fn = [rows, width](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < width; ++c)
        g[rows[i] * width + c] += self.grad[i * width + c];
  };
  return Var<T>(n);
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw InvalidArgument("backward: empty loss");
  if (loss.size() != 1)
    throw InvalidArgument("backward: loss must be scalar, got shape " +
                          shape_str(loss.shape()));
  if (!loss.value().all_finite())
    throw NumericError("backward: non-finite loss at node '" + loss.op() + "' #" +
                       std::to_string(loss.id()));

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& seed = loss.node()->ensure_grad();
  seed[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (!node.requires_grad || !node.backward_fn || node.grad.empty()) continue;
    if (!node.grad.all_finite())
      throw NumericError("backward: non-finite value at node '" + node.op + "' #" +
                         std::to_string(node.id));
    node.backward_fn(node);
  }
  for (Node<T>* node : order) {
    if (!node->backward_fn && !node->grad.empty() && !node->grad.all_finite())
      throw NumericError("backward: non-finite gradient at leaf '" + node->op +
                         "' #" + std::to_string(node->id));
  }
}

#define ASD_INSTANTIATE_GRAPH(T)                                               \
  template struct Tensor<T>;                                                   \
  template class Var<T>;                                                       \
  template Var<T> constant<T>(Tensor<T>);                                      \
  template Var<T> leaf<T>(Tensor<T>, std::string);                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> scale<T>(const Var<T>&, T);                                  \
  template Var<T> add_scalar<T>(const Var<T>&, T);                             \
  template Var<T> relu<T>(const Var<T>&);                                      \
  template Var<T> sum<T>(const Var<T>&);                                       \
  template Var<T> mean<T>(const Var<T>&);                                      \
  template Var<T> reshape<T>(const Var<T>&, Shape);                            \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> matmul_bt<T>(const Var<T>&, const Var<T>&);                  \
  template Var<T> add_row_bias<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, std::size_t,         \
                            std::size_t);                                      \
  template Var<T> conv1d<T>(const Var<T>&, const Var<T>&, std::size_t,         \
                            std::size_t);                                      \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,   \
                                BatchNormStats<T>&, bool, T, T);               \
  template Var<T> global_avg_pool<T>(const Var<T>&);                           \
  template Var<T> l2_normalize_rows<T>(const Var<T>&, T);                      \
  template Var<T> rowwise_dot<T>(const Var<T>&, const Var<T>&);                \
  template Var<T> logsumexp_rows<T>(const Var<T>&);                            \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, const Tensor<T>&);   \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                  \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);      \
  template Var<T> gather_rows<T>(const Var<T>&, const std::vector<std::size_t>&); \
  template void backward<T>(const Var<T>&);

ASD_INSTANTIATE_GRAPH(float)
ASD_INSTANTIATE_GRAPH(double)

#undef ASD_INSTANTIATE_GRAPH

}  // namespace asd::ad
