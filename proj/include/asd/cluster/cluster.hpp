// include/asd/cluster/cluster.hpp

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

// k-means, representative vectors, cosine anomaly scores and k-means pseudo
// labels. Everything here runs in double on row-major point matrices.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/common.hpp"

namespace asd::cluster {

/// n x d row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  void push_row(std::span<const float> v);
  void push_row(std::span<const double> v);
};

struct KMeansConfig {
  std::size_t k = 1;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  std::size_t n_init = 10;  // k-means++ restarts; the lowest inertia wins
};

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assign;
  double inertia = 0;
  std::vector<double> inertia_history;  // of the winning restart
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops at an assignment fixpoint
/// or after max_iters. Nearest-centroid ties go to the lowest index; an empty
/// cluster is moved to the point farthest from its centroid. Throws
/// InvalidArgument when there are fewer points than k, RuntimeError if the
/// inertia ever increases.
KMeansResult kmeans(const Matrix& points, const KMeansConfig& cfg);

/// Sum of squared distances to the nearest centroid.
double inertia(const Matrix& points, const Matrix& centroids);

/// Index of the nearest centroid by squared Euclidean distance.
std::vector<std::size_t> nearest_centroids(const Matrix& points, const Matrix& centroids);

struct RepresentativeSet {
  std::string machine;
  Matrix source;  // k_so centroids
  Matrix target;  // k_ta centroids, or the target embeddings themselves

  std::size_t size() const { return source.rows + target.rows; }
  /// All representatives stacked, source first.
  Matrix stacked() const;

  nlohmann::json to_json() const;
  static RepresentativeSet from_json(const nlohmann::json& j);
};

/// Source embeddings go through k_so-means; when there are at most k_ta
/// target embeddings each one is its own representative, otherwise they are
/// clustered too. k is reduced to the point count when there are fewer
/// points. An empty source or target set throws.
RepresentativeSet build_representatives(const std::string& machine, const Matrix& source,
                                        const Matrix& target, std::size_t k_so,
                                        std::size_t k_ta, std::uint64_t seed);

/// Cosine similarity to every representative, source first.
std::vector<double> similarity_profile(std::span<const double> z, const RepresentativeSet& reps);

/// -max cosine similarity; higher is more anomalous.
double anomaly_score(std::span<const double> z, const RepresentativeSet& reps);

/// Scores of many embeddings against one representative set. Zero rows throw.
std::vector<double> anomaly_scores(const Matrix& z, const RepresentativeSet& reps);

struct LabelInput {
  std::string clip_id;
  std::string machine;
  std::string domain;  // "source" or "target"
  std::vector<double> embedding;
};

struct PseudoLabel {
  std::string clip_id;
  std::string machine;
  std::string domain;
  std::size_t pseudo_class = 0;
};

struct PseudoLabelTable {
  std::size_t k_so = 16;
  std::size_t k_ta = 4;
  std::vector<PseudoLabel> labels;  // input order
  std::vector<std::string> warnings;

  std::size_t classes_per_machine() const { return k_so + k_ta; }
  const PseudoLabel* find(const std::string& clip_id) const;
};

/// Per machine and domain: k-means (k_so for source, k_ta for target, reduced
/// to the point count when needed), then each clip gets the Euclidean nearest
/// centroid of its own domain. Source clusters are numbered 0..k_so-1, target
/// clusters k_so..k_so+k_ta-1.
PseudoLabelTable assign_pseudo_labels(const std::vector<LabelInput>& inputs, std::size_t k_so,
                                      std::size_t k_ta, std::uint64_t seed);

/// Header plus one "clip_id machine domain pseudo_class" row per clip.
std::string pseudo_labels_tsv(const PseudoLabelTable& t);

}  // namespace asd::cluster
