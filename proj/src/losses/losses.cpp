// src/losses/losses.cpp

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

#include "asd/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace asd::losses {
namespace {

double norm(std::span<const float> v) {
  double acc = 0;
  for (float x : v) acc += double(x) * x;
  return std::sqrt(acc);
}

double cosine(std::span<const float> z, const double* c, std::size_t d) {
  double dot = 0, zz = 0, cc = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += z[i] * c[i];
    zz += double(z[i]) * z[i];
    cc += c[i] * c[i];
  }
  if (zz == 0) throw InvalidArgument("scac: zero embedding");
  return cc > 0 ? dot / std::sqrt(zz * cc) : 0.0;
}

double log_sum_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double acc = 0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace

double sim_tau(std::span<const float> z, std::span<const float> zp, double tau) {
  if (!(tau > 0)) throw InvalidArgument("sim_tau: tau must be positive");
  if (z.size() != zp.size()) throw InvalidArgument("sim_tau: dimension mismatch");
  const double a = norm(z), b = norm(zp);
  if (a == 0 || b == 0) throw InvalidArgument("sim_tau: zero vector");
  double dot = 0;
  for (std::size_t i = 0; i < z.size(); ++i) dot += double(z[i]) * zp[i];
  return dot / (tau * a * b);
}

double triplet_loss(std::span<const float> za, std::span<const float> zp,
                    std::span<const float> zn, double tau, double gamma) {
  if (!(gamma >= 0)) throw InvalidArgument("triplet_loss: gamma must be non-negative");
  return std::max(0.0, gamma + 1.0 - sim_tau(za, zp, tau) + sim_tau(za, zn, tau));
}

void SubClusterBank::validate() const {
  if (classes == 0 || sub == 0 || dim == 0) throw InvalidArgument("bank: empty dimensions");
  if (centers.size() != classes * sub * dim) throw InvalidArgument("bank: center count mismatch");
  if (!(scale > 0)) throw InvalidArgument("bank: scale must be positive");
}

SubClusterBank bank_from_state(const model::ModelState<float>& state, std::size_t head) {
  const auto& c = state.centers(head).value();
  SubClusterBank b;
  b.classes = state.class_count();
  b.sub = state.arch.sub_clusters;
  b.dim = c.dim(1);
  b.centers.assign(c.data.begin(), c.data.end());
  b.scale = state.scales[head];
  b.trainable = state.params.trainable(model::head_name(head) + ".centers");
  return b;
}

std::vector<double> scac_logits(std::span<const float> z, const SubClusterBank& bank) {
  bank.validate();
  if (z.size() != bank.dim)
    throw InvalidArgument("scac: embedding has dim " + std::to_string(z.size()) + ", bank expects " +
                          std::to_string(bank.dim));
  std::vector<double> logits(bank.classes), row(bank.sub);
  for (std::size_t c = 0; c < bank.classes; ++c) {
    for (std::size_t j = 0; j < bank.sub; ++j)
      row[j] = bank.scale * cosine(z, &bank.centers[(c * bank.sub + j) * bank.dim], bank.dim);
    logits[c] = log_sum_exp(row) - std::log(static_cast<double>(bank.sub));
  }
  return logits;
}

double scac_loss(std::span<const float> z, std::size_t label, const SubClusterBank& bank) {
  if (label >= bank.classes)
    throw InvalidArgument("scac: label " + std::to_string(label) + " outside " +
                          std::to_string(bank.classes) + " classes");
  const auto logits = scac_logits(z, bank);
  return std::max(0.0, log_sum_exp(logits) - logits[label]);
}

double scac_loss_soft(std::span<const float> z, std::span<const float> target,
                      const SubClusterBank& bank) {
  if (target.size() != bank.classes) throw InvalidArgument("scac: target dimension mismatch");
  const auto logits = scac_logits(z, bank);
  const double lse = log_sum_exp(logits);
  double loss = 0;
  for (std::size_t c = 0; c < bank.classes; ++c) loss += target[c] * (lse - logits[c]);
  return loss;
}

double subspace_loss(const model::EmbeddingBundle& e, std::size_t label,
                     const std::array<SubClusterBank, 4>& banks) {
  double total = scac_loss(e.zcat, label, banks[0]);
  for (std::size_t m = 0; m < 3; ++m) total += scac_loss(e.z[m], label, banks[m + 1]);
  return total;
}

template <typename T>
Var<T> scac_graph(const Var<T>& z, const Var<T>& centers, std::size_t sub, T scale,
                  const Tensor<T>& targets) {
  const std::size_t n = z.shape()[0];
  const std::size_t rows = centers.shape()[0];
  if (z.shape()[1] != centers.shape()[1])
    throw InvalidArgument("scac: embedding dim " + std::to_string(z.shape()[1]) +
                          " does not match center dim " + std::to_string(centers.shape()[1]));
  if (sub == 0 || rows % sub != 0) throw InvalidArgument("scac: center rows not a multiple of sub");
  const std::size_t classes = rows / sub;
  if (targets.shape != ad::Shape{n, classes}) throw InvalidArgument("scac: target shape mismatch");
  auto cos = ad::matmul_bt(ad::l2_normalize_rows(z), ad::l2_normalize_rows(centers));
  auto grouped = ad::reshape(ad::scale(cos, scale), {n * classes, sub});
  auto logits = ad::reshape(ad::logsumexp_rows(grouped), {n, classes});
  logits = ad::add_scalar(logits, static_cast<T>(-std::log(static_cast<double>(sub))));
  return ad::softmax_cross_entropy(logits, targets);
}

template <typename T>
Var<T> subspace_graph(const model::Forward<T>& f, const model::ModelState<T>& state,
                      const Tensor<T>& targets) {
  const std::size_t sub = state.arch.sub_clusters;
  Var<T> total = scac_graph(f.zcat, state.centers(0), sub, static_cast<T>(state.scales[0]), targets);
  for (std::size_t m = 0; m < 3; ++m)
    total = ad::add(total, scac_graph(f.z[m], state.centers(m + 1), sub,
                                      static_cast<T>(state.scales[m + 1]), targets));
  return total;
}

template <typename T>
Var<T> triplet_graph(const Var<T>& za, const Var<T>& zp, const Var<T>& zn, T tau, T gamma) {
  if (!(tau > 0)) throw InvalidArgument("triplet: tau must be positive");
  auto na = ad::l2_normalize_rows(za);
  auto sp = ad::scale(ad::rowwise_dot(na, ad::l2_normalize_rows(zp)), T(1) / tau);
  auto sn = ad::scale(ad::rowwise_dot(na, ad::l2_normalize_rows(zn)), T(1) / tau);
  return ad::mean(ad::relu(ad::add_scalar(ad::sub(sn, sp), gamma + T(1))));
}

template <typename T>
BatchLoss<T> combined_batch_loss(model::ModelState<T>& state, const TrainBatch& batch,
                                 const LossConfig& cfg, Rng& rng, bool training) {
  const std::size_t n = batch.ss.size();
  if (n == 0) throw InvalidArgument("combined_batch_loss: empty batch");
  if (batch.labels.size() != n || batch.machines.size() != n)
    throw InvalidArgument("combined_batch_loss: labels/machines do not match the batch");
  const std::size_t nt = cfg.use_triplet ? batch.triplet_anchor.size() : 0;
  if (cfg.use_triplet) {
    if (batch.positives.size() != nt || batch.negatives.size() != nt)
      throw InvalidArgument("combined_batch_loss: triplet lists differ in length");
    if (nt > 0) {
      const auto first = batch.machines[batch.triplet_anchor.front()];
      bool several = false;
      for (auto a : batch.triplet_anchor) {
        if (a >= n) throw InvalidArgument("combined_batch_loss: triplet anchor out of range");
        several |= batch.machines[a] != first;
      }
      if (!several)
        throw InvalidArgument(
            "combined_batch_loss: all anchors come from one machine type; positives need "
            "noise from a different machine");
    }
  }
  if (!(cfg.mixup_prob >= 0 && cfg.mixup_prob <= 1))
    throw InvalidArgument("combined_batch_loss: mixup_prob outside [0, 1]");

  const std::size_t classes = state.class_count();
  Tensor<T> targets(ad::Shape{n, classes});
  std::vector<model::ModelInput> mixed_store;
  mixed_store.reserve(n);
  std::vector<const model::ModelInput*> inputs(batch.ss.begin(), batch.ss.end());
  std::vector<bool> is_mixed(n, false);
  std::bernoulli_distribution coin(cfg.mixup_prob);
  std::uniform_int_distribution<std::size_t> partner(0, n - 1);
  std::uniform_real_distribution<double> ratio(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.labels[i] >= classes)
      throw InvalidArgument("combined_batch_loss: label " + std::to_string(batch.labels[i]) +
                            " outside " + std::to_string(classes) + " classes");
    targets[i * classes + batch.labels[i]] += T(1);
    if (cfg.mixup_prob > 0 && coin(rng)) {
      const std::size_t j = partner(rng);
      const double lambda = ratio(rng);
      mixed_store.push_back(model::mix_inputs(*batch.ss[i], *batch.ss[j], lambda));
      inputs[i] = &mixed_store.back();
      is_mixed[i] = true;
      targets[i * classes + batch.labels[i]] = static_cast<T>(lambda);
      targets[i * classes + batch.labels[j]] += static_cast<T>(1.0 - lambda);
    }
  }

  // Rows: [ss (maybe mixed) | unmixed anchors of mixed ss | positives | negatives].
  std::vector<std::size_t> anchor_row(nt);
  std::vector<std::size_t> extra_row(n, 0);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t a = batch.triplet_anchor[t];
    if (is_mixed[a] && extra_row[a] == 0) {
      extra_row[a] = inputs.size();
      inputs.push_back(batch.ss[a]);
    }
    anchor_row[t] = is_mixed[a] ? extra_row[a] : a;
  }
  const std::size_t pos_start = inputs.size();
  inputs.insert(inputs.end(), batch.positives.begin(), batch.positives.begin() + static_cast<long>(nt));
  inputs.insert(inputs.end(), batch.negatives.begin(), batch.negatives.begin() + static_cast<long>(nt));

  auto f = model::forward(state, inputs, training);
  std::vector<std::size_t> ss_rows(n);
  for (std::size_t i = 0; i < n; ++i) ss_rows[i] = i;
  model::Forward<T> fs;
  for (std::size_t m = 0; m < 3; ++m) fs.z[m] = ad::gather_rows(f.z[m], ss_rows);
  fs.zcat = ad::gather_rows(f.zcat, ss_rows);
  auto l_ss = subspace_graph(fs, state, targets);

  BatchLoss<T> out;
  out.mixed = mixed_store.size();
  out.terms.l_ss = static_cast<double>(l_ss.item());
  if (nt > 0) {
    std::vector<std::size_t> pos_rows(nt), neg_rows(nt);
    for (std::size_t t = 0; t < nt; ++t) {
      pos_rows[t] = pos_start + t;
      neg_rows[t] = pos_start + nt + t;
    }
    auto l_trp = triplet_graph(ad::gather_rows(f.zcat, anchor_row), ad::gather_rows(f.zcat, pos_rows),
                               ad::gather_rows(f.zcat, neg_rows), static_cast<T>(cfg.triplet.tau),
                               static_cast<T>(cfg.triplet.gamma));
    out.terms.l_trp = static_cast<double>(l_trp.item());
    out.total = ad::add(l_trp, l_ss);
  } else {
    out.total = l_ss;
  }
  out.terms.l_mlt = out.terms.l_trp + out.terms.l_ss;
  return out;
}

double adacos_scale(std::span<const double> cosines, std::size_t n, std::size_t classes,
                    std::size_t sub, const std::vector<std::size_t>& labels, double scale) {
  if (cosines.size() != n * classes * sub || labels.size() != n || n == 0)
    throw InvalidArgument("adacos_scale: shape mismatch");
  double b_sum = 0;
  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t j = 0; j < sub; ++j) {
        const double v = cosines[(i * classes + c) * sub + j];
        if (c == labels[i]) best = std::max(best, v);
        else b_sum += std::exp(scale * v);
      }
    theta[i] = std::acos(std::clamp(best, -1.0, 1.0));
  }
  std::nth_element(theta.begin(), theta.begin() + static_cast<long>(n / 2), theta.end());
  const double med = theta[n / 2];
  const double b_avg = std::max(b_sum / static_cast<double>(n), 1e-12);
  return std::log(b_avg) / std::cos(std::min(std::numbers::pi / 4, med));
}

template Var<float> scac_graph<float>(const Var<float>&, const Var<float>&, std::size_t, float,
                                      const Tensor<float>&);
template Var<double> scac_graph<double>(const Var<double>&, const Var<double>&, std::size_t, double,
                                        const Tensor<double>&);
template Var<float> subspace_graph<float>(const model::Forward<float>&,
                                          const model::ModelState<float>&, const Tensor<float>&);
template Var<double> subspace_graph<double>(const model::Forward<double>&,
                                            const model::ModelState<double>&, const Tensor<double>&);
template Var<float> triplet_graph<float>(const Var<float>&, const Var<float>&, const Var<float>&,
                                         float, float);
template Var<double> triplet_graph<double>(const Var<double>&, const Var<double>&,
                                           const Var<double>&, double, double);
template BatchLoss<float> combined_batch_loss<float>(model::ModelState<float>&, const TrainBatch&,
                                                     const LossConfig&, Rng&, bool);
template BatchLoss<double> combined_batch_loss<double>(model::ModelState<double>&,
                                                       const TrainBatch&, const LossConfig&, Rng&,
                                                       bool);

}  // namespace asd::losses
