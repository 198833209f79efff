// tests/unit/cluster_test.cpp

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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "asd/cluster/cluster.hpp"

using namespace asd;
using namespace asd::cluster;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m;
  m.cols = rows.front().size();
  for (const auto& r : rows) m.push_row(std::span<const double>(r));
  return m;
}

// Minimum inertia over every assignment of n points to at most k clusters.
double brute_force_inertia(const Matrix& p, std::size_t k) {
  const std::size_t n = p.rows;
  std::vector<std::size_t> a(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::vector<double>> sum(k, std::vector<double>(p.cols, 0.0));
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++cnt[a[i]];
      for (std::size_t d = 0; d < p.cols; ++d) sum[a[i]][d] += p.row(i)[d];
    }
    double in = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < p.cols; ++d) {
        const double c = sum[a[i]][d] / double(cnt[a[i]]);
        in += (p.row(i)[d] - c) * (p.row(i)[d] - c);
      }
    best = std::min(best, in);
    std::size_t i = 0;
    while (i < n && ++a[i] == k) a[i++] = 0;
    if (i == n) break;
  }
  return best;
}

}  // namespace

TEST_CASE("k = 1 gives the mean") {
  auto p = from_rows({{1, 2}, {3, 6}, {5, 1}});
  auto r = kmeans(p, {1, 0});
  CHECK(r.centroids.row(0)[0] == doctest::Approx(3.0));
  CHECK(r.centroids.row(0)[1] == doctest::Approx(3.0));
}

TEST_CASE("two points, two clusters") {
  auto p = from_rows({{0}, {10}});
  auto r = kmeans(p, {2, 1});
  CHECK(r.inertia == 0.0);
  std::vector<double> c{r.centroids.row(0)[0], r.centroids.row(1)[0]};
  std::sort(c.begin(), c.end());
  CHECK(c == std::vector<double>{0, 10});
  CHECK_THROWS_AS(kmeans(p, {3, 0}), InvalidArgument);
}

TEST_CASE("six points reach the exhaustive optimum") {
  auto p = from_rows({{0, 0}, {1, 0}, {0, 1}, {8, 8}, {9, 8}, {20, 0}});
  auto r = kmeans(p, {2, 3});
  CHECK(r.inertia == doctest::Approx(brute_force_inertia(p, 2)));
  CHECK(r.inertia == doctest::Approx(inertia(p, r.centroids)));
}

TEST_CASE("lloyd iterations never increase inertia") {
  Rng rng(12);
  std::normal_distribution<double> g;
  for (int t = 0; t < 10; ++t) {
    Matrix p(60, 3);
    for (auto& v : p.data) v = g(rng) + (&v - p.data.data()) % 7;
    auto r = kmeans(p, {5, std::uint64_t(t)});
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
    auto nc = nearest_centroids(p, r.centroids);
    CHECK(nc == r.assign);
  }
}

TEST_CASE("representatives") {
  Rng rng(1);
  std::normal_distribution<double> g;
  Matrix src(990, 4), tgt(10, 4);
  for (auto& v : src.data) v = g(rng);
  for (auto& v : tgt.data) v = g(rng);
  auto reps = build_representatives("fan", src, tgt, 16, 10, 0);
  CHECK(reps.size() == 26);
  CHECK(reps.target.data == tgt.data);

  Matrix same(40, 2);
  for (std::size_t i = 0; i < 40; ++i) same.row(i)[0] = 2, same.row(i)[1] = -1;
  auto r2 = build_representatives("x", same, from_rows({{0, 1}}), 16, 10, 0);
  REQUIRE(r2.source.rows == 16);
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(r2.source.row(j)[0] == 2.0);
    CHECK(r2.source.row(j)[1] == -1.0);
  }

  // More targets than k_ta: clustered down to k_ta.
  Matrix many(25, 4);
  for (auto& v : many.data) v = g(rng);
  CHECK(build_representatives("y", src, many, 16, 10, 0).target.rows == 10);
  // Fewer source points than k_so: k is reduced.
  Matrix few(5, 4);
  for (auto& v : few.data) v = g(rng);
  CHECK(build_representatives("z", few, tgt, 16, 10, 0).source.rows == 5);
  CHECK_THROWS_AS(build_representatives("w", Matrix(0, 4), tgt, 16, 10, 0), InvalidArgument);

  auto back = RepresentativeSet::from_json(reps.to_json());
  CHECK(back.source.data == reps.source.data);
  CHECK(back.target.data == reps.target.data);
  CHECK(back.machine == "fan");
}

TEST_CASE("similarity profile and anomaly score") {
  RepresentativeSet r;
  r.source = from_rows({{1, 0}});
  r.target = from_rows({{0, 1}});
  std::vector<double> z{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)};
  auto prof = similarity_profile(z, r);
  CHECK(prof[0] == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK(prof[1] == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK(anomaly_score(z, r) == doctest::Approx(-0.7071).epsilon(1e-4));

  std::vector<double> on{0, 3};
  CHECK(anomaly_score(on, r) == doctest::Approx(-1.0));
  RepresentativeSet r3;
  r3.source = from_rows({{1, 0, 0}});
  r3.target = from_rows({{0, 1, 0}});
  std::vector<double> orth{0, 0, 2};
  CHECK(anomaly_score(orth, r3) == 0.0);
  std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(anomaly_score(zero, r), InvalidArgument);

  Matrix batch = from_rows({{1, 1}, {0, 3}});
  auto s = anomaly_scores(batch, r);
  CHECK(s[0] == doctest::Approx(anomaly_score(z, r)));
  CHECK(s[1] == doctest::Approx(-1.0));
}

TEST_CASE("pseudo labels") {
  SUBCASE("n = k gives distinct labels") {
    std::vector<LabelInput> in;
    for (int i = 0; i < 4; ++i) in.push_back({"c" + std::to_string(i), "fan", "source", {double(i), 0}});
    auto t = assign_pseudo_labels(in, 4, 4, 0);
    std::set<std::size_t> seen;
    for (const auto& l : t.labels) seen.insert(l.pseudo_class);
    CHECK(seen.size() == 4);
  }
  SUBCASE("identical points all land in cluster 0") {
    std::vector<LabelInput> in;
    for (int i = 0; i < 30; ++i) in.push_back({"c" + std::to_string(i), "fan", "source", {1, 1}});
    auto t = assign_pseudo_labels(in, 16, 4, 0);
    for (const auto& l : t.labels) CHECK(l.pseudo_class == 0);
  }
  SUBCASE("eight separated blobs are recovered") {
    Rng rng(4);
    std::normal_distribution<double> g(0, 0.05);
    std::vector<LabelInput> in;
    std::vector<std::size_t> blob;
    for (int i = 0; i < 160; ++i) {
      const std::size_t b = i % 8;
      in.push_back({"c" + std::to_string(i), "fan", "source",
                    {10.0 * double(b % 4) + g(rng), 10.0 * double(b / 4) + g(rng)}});
      blob.push_back(b);
    }
    auto t = assign_pseudo_labels(in, 8, 4, 3);
    std::map<std::size_t, std::size_t> blob_to_label;
    std::set<std::size_t> labels;
    for (std::size_t i = 0; i < in.size(); ++i) {
      auto [it, fresh] = blob_to_label.emplace(blob[i], t.labels[i].pseudo_class);
      CHECK(it->second == t.labels[i].pseudo_class);
      labels.insert(t.labels[i].pseudo_class);
    }
    CHECK(labels.size() == 8);
  }
  SUBCASE("target clusters are offset by k_so and domains are separate") {
    std::vector<LabelInput> in;
    for (int i = 0; i < 20; ++i) in.push_back({"s" + std::to_string(i), "fan", "source", {double(i), 0}});
    for (int i = 0; i < 6; ++i) in.push_back({"t" + std::to_string(i), "fan", "target", {double(i), 5}});
    in.push_back({"p0", "pump", "source", {0, 0}});
    auto t = assign_pseudo_labels(in, 16, 4, 0);
    for (const auto& l : t.labels) {
      if (l.domain == "target") {
        CHECK(l.pseudo_class >= 16);
        CHECK(l.pseudo_class < 20);
      } else {
        CHECK(l.pseudo_class < 16);
      }
    }
    CHECK(t.find("p0")->pseudo_class == 0);
    CHECK_FALSE(t.warnings.empty());  // pump has no target clips
    CHECK(t.find("nope") == nullptr);
    CHECK(pseudo_labels_tsv(t).rfind("clip_id\t", 0) == 0);
  }
}
