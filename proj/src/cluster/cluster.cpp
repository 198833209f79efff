// src/cluster/cluster.cpp

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

#include "asd/cluster/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "asd/kernels/kernels.hpp"

namespace asd::cluster {
namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0;
  for (std::size_t t = 0; t < d; ++t) {
    const double diff = a[t] - b[t];
    acc += diff * diff;
  }
  return acc;
}

Matrix plus_plus_seed(const Matrix& pts, std::size_t k, Rng& rng) {
  const std::size_t n = pts.rows, d = pts.cols;
  Matrix c(k, d);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(pts.row(first), d, c.row(0));
  std::vector<double> best(n);
  for (std::size_t i = 0; i < n; ++i) best[i] = sq_dist(pts.row(i), c.row(0), d);
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0;
    for (double v : best) total += v;
    std::size_t pick = 0;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (r < best[i]) {
          pick = i;
          break;
        }
        r -= best[i];
      }
    }
    std::copy_n(pts.row(pick), d, c.row(j));
    for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], sq_dist(pts.row(i), c.row(j), d));
  }
  return c;
}

KMeansResult lloyd(const Matrix& pts, Matrix centroids, std::size_t max_iters) {
  const std::size_t n = pts.rows, d = pts.cols, k = centroids.rows;
  KMeansResult r;
  std::vector<std::size_t> assign(n);
  std::vector<double> dist(n);
  std::vector<std::size_t> prev;
  for (std::size_t it = 0;; ++it) {
    kernels::parallel::nearest_centroid(n, k, d, pts.data, centroids.data, assign, dist);
    double in = 0;
    for (double v : dist) in += v;
    if (!r.inertia_history.empty()) {
      const double last = r.inertia_history.back();
      if (in > last + 1e-12 * std::max(1.0, last))
        throw RuntimeError("kmeans: inertia increased from " + std::to_string(last) + " to " +
                           std::to_string(in));
    }
    r.inertia_history.push_back(in);
    r.iterations = it;
    if (assign == prev || it >= max_iters) break;
    prev = assign;

    Matrix next(k, d);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      double* c = next.row(assign[i]);
      for (std::size_t t = 0; t < d; ++t) c[t] += pts.row(i)[t];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) {
        for (std::size_t t = 0; t < d; ++t) next.row(j)[t] /= static_cast<double>(count[j]);
        continue;
      }
      // Empty: move to the point farthest from its current centroid.
      std::size_t far = 0;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      taken[far] = true;
      std::copy_n(pts.row(far), d, next.row(j));
    }
    centroids = std::move(next);
  }
  r.centroids = std::move(centroids);
  r.assign = std::move(assign);
  r.inertia = r.inertia_history.back();
  return r;
}

}  // namespace

void Matrix::push_row(std::span<const float> v) {
  if (rows == 0 && cols == 0) cols = v.size();
  if (v.size() != cols) throw InvalidArgument("matrix: row length mismatch");
  data.insert(data.end(), v.begin(), v.end());
  ++rows;
}

void Matrix::push_row(std::span<const double> v) {
  if (rows == 0 && cols == 0) cols = v.size();
  if (v.size() != cols) throw InvalidArgument("matrix: row length mismatch");
  data.insert(data.end(), v.begin(), v.end());
  ++rows;
}

KMeansResult kmeans(const Matrix& points, const KMeansConfig& cfg) {
  if (cfg.k == 0) throw InvalidArgument("kmeans: k must be at least 1");
  if (points.rows < cfg.k)
    throw InvalidArgument("kmeans: " + std::to_string(points.rows) + " points for k = " +
                          std::to_string(cfg.k));
  if (points.cols == 0) throw InvalidArgument("kmeans: zero-dimensional points");
  KMeansResult best;
  bool have = false;
  Rng rng(cfg.seed);
  for (std::size_t run = 0; run < std::max<std::size_t>(cfg.n_init, 1); ++run) {
    auto r = lloyd(points, plus_plus_seed(points, cfg.k, rng), cfg.max_iters);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

double inertia(const Matrix& points, const Matrix& centroids) {
  std::vector<std::size_t> a(points.rows);
  std::vector<double> d(points.rows);
  kernels::serial::nearest_centroid(points.rows, centroids.rows, points.cols, points.data,
                                    centroids.data, a, d);
  double s = 0;
  for (double v : d) s += v;
  return s;
}

std::vector<std::size_t> nearest_centroids(const Matrix& points, const Matrix& centroids) {
  if (points.rows > 0 && points.cols != centroids.cols)
    throw InvalidArgument("nearest_centroids: dimension mismatch");
  std::vector<std::size_t> a(points.rows);
  std::vector<double> d(points.rows);
  kernels::parallel::nearest_centroid(points.rows, centroids.rows, points.cols, points.data,
                                      centroids.data, a, d);
  return a;
}

Matrix RepresentativeSet::stacked() const {
  Matrix m(0, source.cols);
  m.data = source.data;
  m.data.insert(m.data.end(), target.data.begin(), target.data.end());
  m.rows = source.rows + target.rows;
  return m;
}

nlohmann::json RepresentativeSet::to_json() const {
  return {{"machine", machine},
          {"dim", source.cols},
          {"source", source.data},
          {"target", target.data}};
}

RepresentativeSet RepresentativeSet::from_json(const nlohmann::json& j) {
  RepresentativeSet r;
  r.machine = j.at("machine").get<std::string>();
  const auto dim = j.at("dim").get<std::size_t>();
  if (dim == 0) throw InvalidArgument("representatives: zero dimension");
  r.source.cols = r.target.cols = dim;
  r.source.data = j.at("source").get<std::vector<double>>();
  r.target.data = j.at("target").get<std::vector<double>>();
  if (r.source.data.size() % dim || r.target.data.size() % dim)
    throw InvalidArgument("representatives for '" + r.machine + "' have ragged rows");
  r.source.rows = r.source.data.size() / dim;
  r.target.rows = r.target.data.size() / dim;
  return r;
}

RepresentativeSet build_representatives(const std::string& machine, const Matrix& source,
                                        const Matrix& target, std::size_t k_so,
                                        std::size_t k_ta, std::uint64_t seed) {
  if (source.rows == 0) throw InvalidArgument("representatives: no source embeddings for '" + machine + "'");
  if (target.rows == 0) throw InvalidArgument("representatives: no target embeddings for '" + machine + "'");
  if (k_so == 0 || k_ta == 0) throw InvalidArgument("representatives: k must be positive");
  RepresentativeSet r;
  r.machine = machine;
  KMeansConfig cfg;
  cfg.k = std::min(k_so, source.rows);
  cfg.seed = derive_seed(seed, fnv1a(machine), 0);
  r.source = kmeans(source, cfg).centroids;
  if (target.rows <= k_ta) {
    r.target = target;
  } else {
    cfg.k = k_ta;
    cfg.seed = derive_seed(seed, fnv1a(machine), 1);
    r.target = kmeans(target, cfg).centroids;
  }
  return r;
}

std::vector<double> similarity_profile(std::span<const double> z, const RepresentativeSet& reps) {
  const Matrix all = reps.stacked();
  if (z.size() != all.cols) throw InvalidArgument("similarity_profile: dimension mismatch");
  double zz = 0;
  for (double v : z) zz += v * v;
  if (zz == 0) throw InvalidArgument("similarity_profile: zero test vector");
  std::vector<double> s(all.rows);
  kernels::serial::cosine_matrix(1, all.rows, all.cols, z, all.data, s);
  return s;
}

double anomaly_score(std::span<const double> z, const RepresentativeSet& reps) {
  const auto s = similarity_profile(z, reps);
  if (s.empty()) throw InvalidArgument("anomaly_score: empty representative set");
  return -*std::max_element(s.begin(), s.end());
}

std::vector<double> anomaly_scores(const Matrix& z, const RepresentativeSet& reps) {
  const Matrix all = reps.stacked();
  if (all.rows == 0) throw InvalidArgument("anomaly_scores: empty representative set");
  if (z.rows == 0) return {};
  if (z.cols != all.cols) throw InvalidArgument("anomaly_scores: dimension mismatch");
  for (std::size_t i = 0; i < z.rows; ++i) {
    double zz = 0;
    for (std::size_t t = 0; t < z.cols; ++t) zz += z.row(i)[t] * z.row(i)[t];
    if (zz == 0) throw InvalidArgument("anomaly_scores: zero test vector at row " + std::to_string(i));
  }
  std::vector<double> s(z.rows * all.rows);
  kernels::parallel::cosine_matrix(z.rows, all.rows, all.cols, z.data, all.data, s);
  std::vector<double> out(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i)
    out[i] = -*std::max_element(s.begin() + static_cast<long>(i * all.rows),
                                s.begin() + static_cast<long>((i + 1) * all.rows));
  return out;
}

const PseudoLabel* PseudoLabelTable::find(const std::string& clip_id) const {
  for (const auto& l : labels)
    if (l.clip_id == clip_id) return &l;
  return nullptr;
}

PseudoLabelTable assign_pseudo_labels(const std::vector<LabelInput>& inputs, std::size_t k_so,
                                      std::size_t k_ta, std::uint64_t seed) {
  if (k_so == 0 || k_ta == 0) throw InvalidArgument("pseudo labels: k must be positive");
  PseudoLabelTable t;
  t.k_so = k_so;
  t.k_ta = k_ta;
  t.labels.resize(inputs.size());
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  std::map<std::string, bool> machines;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    if (in.domain != "source" && in.domain != "target")
      throw InvalidArgument("pseudo labels: clip '" + in.clip_id + "' has domain '" + in.domain + "'");
    groups[{in.machine, in.domain}].push_back(i);
    machines[in.machine] = true;
    t.labels[i] = {in.clip_id, in.machine, in.domain, 0};
  }
  for (const auto& [m, unused] : machines)
    for (const char* dom : {"source", "target"})
      if (!groups.count({m, dom}))
        t.warnings.push_back("machine '" + m + "' has no " + dom + " clips; domain skipped");

  for (const auto& [key, idx] : groups) {
    const bool source = key.second == "source";
    Matrix pts;
    for (auto i : idx) pts.push_row(std::span<const double>(inputs[i].embedding));
    KMeansConfig cfg;
    cfg.k = std::min(source ? k_so : k_ta, pts.rows);
    cfg.seed = derive_seed(seed, fnv1a(key.first), source ? 0 : 1);
    const auto km = kmeans(pts, cfg);
    const auto near = nearest_centroids(pts, km.centroids);
    for (std::size_t r = 0; r < idx.size(); ++r)
      t.labels[idx[r]].pseudo_class = (source ? 0 : k_so) + near[r];
  }
  return t;
}

std::string pseudo_labels_tsv(const PseudoLabelTable& t) {
  std::ostringstream os;
  os << "clip_id\tmachine\tdomain\tpseudo_class\n";
  for (const auto& l : t.labels)
    os << l.clip_id << '\t' << l.machine << '\t' << l.domain << '\t' << l.pseudo_class << '\n';
  return os.str();
}

}  // namespace asd::cluster
