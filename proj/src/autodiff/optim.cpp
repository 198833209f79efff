// src/autodiff/optim.cpp

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

#include "asd/autodiff/optim.hpp"

#include <algorithm>
#include <cmath>

namespace asd::ad {

template <typename T>
Var<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (params_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  const Shape shape = value.shape;
  auto [it, ok] = params_.emplace(name, leaf<T>(std::move(value), name));
  m_.emplace(name, Tensor<T>(shape));
  v_.emplace(name, Tensor<T>(shape));
  if (!trainable) frozen_.insert(name);
  return it->second;
}

template <typename T>
Var<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
std::map<std::string, Tensor<T>> ParamStore<T>::gradients() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, p] : params_)
    out.emplace(name, p.grad().empty() ? Tensor<T>(p.shape()) : p.grad());
  return out;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.size();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore<T> out;
  for (const auto& [name, p] : params_) {
    out.add(name, p.value(), trainable(name));
    out.m_.at(name) = m_.at(name);
    out.v_.at(name) = v_.at(name);
  }
  out.step_count_ = step_count_;
  return out;
}

template <typename T>
void adamw_step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads,
                const AdamWConfig& cfg) {
  if (!(cfg.lr > 0)) throw InvalidArgument("adamw_step: lr must be positive");
  for (const auto& [name, p] : params.params()) {
    if (!params.trainable(name)) continue;
    auto it = grads.find(name);
    if (it == grads.end()) throw InvalidArgument("adamw_step: no gradient for '" + name + "'");
    if (it->second.shape != p.shape())
      throw InvalidArgument("adamw_step: gradient for '" + name + "' has shape " +
                            shape_str(it->second.shape) + ", parameter " +
                            shape_str(p.shape()));
  }
  params.bump_step();
  const double t = static_cast<double>(params.step_count());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, pconst] : params.params()) {
    if (!params.trainable(name)) continue;
    Var<T> p = pconst;
    auto& value = p.mutable_value();
    auto& m = params.first_moments().at(name);
    auto& v = params.second_moments().at(name);
    const auto& g = grads.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double old = value[i];
      value[i] = static_cast<T>(old - cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                                                cfg.weight_decay * old));
    }
  }
}

template <typename T>
void adamw_step(ParamStore<T>& params, const AdamWConfig& cfg) {
  adamw_step(params, params.gradients(), cfg);
}

template <typename T>
Tensor<T> finite_diff(const std::function<T(const Tensor<T>&)>& f,
                      const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw InvalidArgument("finite_diff: eps must be positive");
  Tensor<T> grad(x.shape);
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (T(2) * eps);
  }
  return grad;
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  if (a.shape != b.shape)
    throw InvalidArgument("max_relative_error: shape mismatch " + shape_str(a.shape) +
                          " vs " + shape_str(b.shape));
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adamw_step<float>(ParamStore<float>&,
                                const std::map<std::string, Tensor<float>>&,
                                const AdamWConfig&);
template void adamw_step<double>(ParamStore<double>&,
                                 const std::map<std::string, Tensor<double>>&,
                                 const AdamWConfig&);
template void adamw_step<float>(ParamStore<float>&, const AdamWConfig&);
template void adamw_step<double>(ParamStore<double>&, const AdamWConfig&);
template Tensor<float> finite_diff<float>(const std::function<float(const Tensor<float>&)>&,
                                          const Tensor<float>&, float);
template Tensor<double> finite_diff<double>(
    const std::function<double(const Tensor<double>&)>&, const Tensor<double>&, double);
template double max_relative_error<float>(const Tensor<float>&, const Tensor<float>&, double);
template double max_relative_error<double>(const Tensor<double>&, const Tensor<double>&,
                                           double);

}  // namespace asd::ad
