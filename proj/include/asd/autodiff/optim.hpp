// include/asd/autodiff/optim.hpp

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

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "asd/autodiff/graph.hpp"

namespace asd::ad {

/// Named parameters plus AdamW moments. Parameters are graph leaves, so a
/// forward pass that reads them and a `backward()` fill their gradients.
/// Frozen parameters keep moments (shape invariant) but are never updated.
template <typename T>
class ParamStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  bool trainable(const std::string& name) const { return !frozen_.count(name); }

  /// Drops accumulated gradients; parameters unreachable from the next loss
  /// therefore see a zero gradient.
  void zero_grad();

  /// Gradient of each parameter; zeros where nothing was accumulated.
  std::map<std::string, Tensor<T>> gradients() const;

  const std::map<std::string, Var<T>>& params() const { return params_; }
  std::map<std::string, Tensor<T>>& first_moments() { return m_; }
  std::map<std::string, Tensor<T>>& second_moments() { return v_; }
  const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }
  std::uint64_t step_count() const { return step_count_; }
  void set_step_count(std::uint64_t s) { step_count_ = s; }
  void bump_step() { ++step_count_; }

  std::size_t parameter_count() const;

  /// Deep copy. Copying the store itself shares the parameter nodes.
  ParamStore clone() const;

 private:
  std::map<std::string, Var<T>> params_;
  std::map<std::string, Tensor<T>> m_;
  std::map<std::string, Tensor<T>> v_;
  std::set<std::string> frozen_;
  std::uint64_t step_count_ = 0;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam step:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// with bias-corrected m_hat, v_hat. `grads` must hold a same-shape entry for
/// every trainable parameter.
template <typename T>
void adamw_step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads,
                const AdamWConfig& cfg);

/// Convenience overload reading gradients off the parameter leaves.
template <typename T>
void adamw_step(ParamStore<T>& params, const AdamWConfig& cfg);

/// Central-difference gradient estimate of f at x:
///   (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
template <typename T>
Tensor<T> finite_diff(const std::function<T(const Tensor<T>&)>& f,
                      const Tensor<T>& x, T eps);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b,
                          double floor = 1e-7);

}  // namespace asd::ad
