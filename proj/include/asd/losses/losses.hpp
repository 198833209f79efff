// include/asd/losses/losses.hpp

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

// Similarity with temperature, triplet margin loss, sub-cluster AdaCos and the
// subspace sum over the four heads. Scalar versions work on plain vectors and
// serve as references; the graph versions are what training differentiates.

#pragma once

#include <array>
#include <span>
#include <vector>

#include "asd/features/augment.hpp"
#include "asd/model/model.hpp"

namespace asd::losses {

using ad::Tensor;
using ad::Var;

/// <z, z'> / (tau |z| |z'|). Zero vectors and tau <= 0 throw.
double sim_tau(std::span<const float> z, std::span<const float> zp, double tau);

/// max{0, gamma + 1 - s_tau(za, zp) + s_tau(za, zn)}
double triplet_loss(std::span<const float> za, std::span<const float> zp,
                    std::span<const float> zn, double tau, double gamma);

/// Centers of one head, class-major: row c * sub + j is sub-cluster j of
/// class c.
struct SubClusterBank {
  std::size_t classes = 0;
  std::size_t sub = 16;
  std::size_t dim = 0;
  std::vector<double> centers;
  double scale = 1.0;
  bool trainable = true;

  void validate() const;
};

SubClusterBank bank_from_state(const model::ModelState<float>& state, std::size_t head);

/// Class logits: logsumexp_j(scale * cos(z, c_cj)) - ln(sub).
std::vector<double> scac_logits(std::span<const float> z, const SubClusterBank& bank);
/// Cross-entropy of softmax(scac_logits) at `label`.
double scac_loss(std::span<const float> z, std::size_t label, const SubClusterBank& bank);
/// Soft-target version: -sum_c target_c log softmax_c.
double scac_loss_soft(std::span<const float> z, std::span<const float> target,
                      const SubClusterBank& bank);

/// Sum of SCAC over the concatenated head and the three branch heads.
double subspace_loss(const model::EmbeddingBundle& e, std::size_t label,
                     const std::array<SubClusterBank, 4>& banks);

struct LossTerms {
  double l_trp = 0;
  double l_ss = 0;
  double l_mlt = 0;
};

// Graph versions. `targets` are [N, C] label rows (soft under mixup).
template <typename T>
Var<T> scac_graph(const Var<T>& z, const Var<T>& centers, std::size_t sub, T scale,
                  const Tensor<T>& targets);
template <typename T>
Var<T> subspace_graph(const model::Forward<T>& f, const model::ModelState<T>& state,
                      const Tensor<T>& targets);
/// Mean over rows of max{0, gamma + 1 - s_p + s_n}.
template <typename T>
Var<T> triplet_graph(const Var<T>& za, const Var<T>& zp, const Var<T>& zn, T tau, T gamma);

/// One training batch. `ss` entries feed the subspace loss; the first
/// `triplet_anchor.size()` triplets reference anchors by index into `ss`.
struct TrainBatch {
  std::vector<const model::ModelInput*> ss;
  std::vector<std::size_t> labels;    // class index per ss entry
  std::vector<std::size_t> machines;  // machine index per ss entry
  std::vector<std::size_t> triplet_anchor;
  std::vector<const model::ModelInput*> positives;
  std::vector<const model::ModelInput*> negatives;
};

struct LossConfig {
  features::TripletConfig triplet;
  bool use_triplet = true;
  double mixup_prob = 0.5;
};

template <typename T>
struct BatchLoss {
  Var<T> total;
  LossTerms terms;
  std::size_t mixed = 0;  // number of ss entries that were mixed
};

/// L_mlt = mean triplet loss + mean subspace loss over the (possibly mixed)
/// ss entries. Each ss entry is mixed with probability mixup_prob with a
/// uniformly drawn partner and lambda ~ U(0, 1); triplets always see the
/// unmixed anchor. Triplets need at least two machines in the batch.
template <typename T>
BatchLoss<T> combined_batch_loss(model::ModelState<T>& state, const TrainBatch& batch,
                                 const LossConfig& cfg, Rng& rng, bool training = true);

/// Dynamic AdaCos scale from a batch of cosines [N, C*S] and hard labels:
/// log(B_avg) / cos(min(pi/4, median target angle)).
double adacos_scale(std::span<const double> cosines, std::size_t n, std::size_t classes,
                    std::size_t sub, const std::vector<std::size_t>& labels, double scale);

}  // namespace asd::losses
