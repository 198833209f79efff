// tests/unit/selector_test.cpp

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
#include <random>

#include "asd/selector/selector.hpp"

using namespace asd;
using namespace asd::selector;

namespace {

ExternalCandidate cand(std::string id, std::map<std::string, double> scores,
                       std::vector<std::string> tags = {"/x/a"}) {
  ExternalCandidate c;
  c.clip_id = std::move(id);
  c.path = c.clip_id + ".wav";
  c.scores = std::move(scores);
  c.tags = std::move(tags);
  return c;
}

}  // namespace

TEST_CASE("machine threshold is the maximum training score") {
  CHECK(machine_threshold({-0.9, -0.8, -0.95}) == -0.8);
  CHECK(machine_threshold({-0.3}) == -0.3);
  CHECK(machine_threshold({-0.5, -0.2, -0.2}) == -0.2);
  CHECK_THROWS_AS(machine_threshold({}), InvalidArgument);
}

TEST_CASE("filter, sort and cap") {
  std::vector<ExternalCandidate> pool{cand("a", {{"fan", -0.5}}), cand("b", {{"fan", -0.9}}),
                                      cand("c", {{"fan", -0.2}})};
  auto s = select_pseudo_anomalous(pool, {{"fan", -0.4}}, {1});
  REQUIRE(s.per_machine["fan"].size() == 1);
  CHECK(s.per_machine["fan"][0].clip_id == "b");
  CHECK(s.n_out["fan"] == 2);

  auto none = select_pseudo_anomalous(pool, {{"fan", -0.95}}, {10});
  CHECK(none.total() == 0);
  // Strictly below: a candidate equal to the threshold stays out.
  auto eq = select_pseudo_anomalous(pool, {{"fan", -0.5}}, {10});
  CHECK(eq.total() == 1);
}

TEST_CASE("assignment and labels") {
  auto c = cand("x", {{"pump", -0.7}, {"fan", -0.7}, {"valve", -0.1}}, {"m/05r5c", "m/other"});
  CHECK(c.assigned_machine() == "fan");
  CHECK(c.external_class() == "m/05r5c");
  CHECK(cand("y", {{"fan", 0}}, {}).external_class() == "unknown");

  std::vector<ExternalCandidate> pool{cand("p", {{"machineA", -0.9}, {"machineB", -0.1}}, {"m/05r5c"}),
                                      cand("q", {{"machineA", -0.1}, {"machineB", -0.9}}, {"m/05r5c"})};
  auto s = select_pseudo_anomalous(pool, {{"machineA", 0}, {"machineB", 0}}, {10});
  CHECK(s.labels() == std::vector<std::string>{"machineA_m/05r5c", "machineB_m/05r5c"});
  CHECK(make_label("fan", "/x/a") == "fan_/x/a");
}

TEST_CASE("random selection") {
  std::vector<ExternalCandidate> pool;
  for (int i = 0; i < 30; ++i)
    pool.push_back(cand("c" + std::to_string(i), {{i % 2 ? "fan" : "pump", -0.1 * i}}));
  auto all = select_random(pool, {100, true}, 1);
  CHECK(all.total() == 30);
  CHECK(all.n_out.at("fan") == 15);
  auto a = select_random(pool, {5, true}, 7);
  auto b = select_random(pool, {5, true}, 7);
  CHECK(a.total() == 10);
  CHECK(selection_tsv(a) == selection_tsv(b));
  for (const auto& [m, v] : a.per_machine)
    for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i - 1].score <= v[i].score);
}

TEST_CASE("random selection draws from the whole pool for every machine") {
  // 40 clips, all assigned to fan; pump still samples them, and over many
  // seeds each clip is picked at the rate N_max / pool.
  std::vector<ExternalCandidate> pool;
  for (int i = 0; i < 40; ++i)
    pool.push_back(cand("c" + std::to_string(i), {{"fan", -0.9}, {"pump", -0.1}}));
  std::map<std::string, int> hits;
  const int draws = 400;
  for (int d = 0; d < draws; ++d) {
    auto sel = select_random(pool, {10, true}, static_cast<std::uint64_t>(d));
    REQUIRE(sel.per_machine.at("pump").size() == 10);
    for (const auto& x : sel.per_machine.at("pump")) ++hits[x.clip_id];
  }
  // first 8 clips play the role of a subset with base rate 0.2
  int subset = 0;
  for (int i = 0; i < 8; ++i) subset += hits["c" + std::to_string(i)];
  CHECK(double(subset) / (10.0 * draws) == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("selection matches a sort oracle on random pools") {
  Rng rng(21);
  std::uniform_real_distribution<double> u(-1, 0);
  const std::vector<std::string> machines{"fan", "pump", "valve"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ExternalCandidate> pool;
    for (int i = 0; i < 40; ++i) {
      std::map<std::string, double> sc;
      for (const auto& m : machines) sc[m] = std::round(u(rng) * 20) / 20;  // ties on purpose
      pool.push_back(cand("c" + std::to_string(100 + i), sc));
    }
    std::map<std::string, double> thr{{"fan", u(rng)}, {"pump", u(rng)}, {"valve", u(rng)}};
    const std::size_t n_max = 1 + trial % 6;
    auto s = select_pseudo_anomalous(pool, thr, {n_max});
    for (const auto& m : machines) {
      std::vector<std::pair<double, std::string>> want;
      for (const auto& c : pool) {
        auto best = std::min_element(c.scores.begin(), c.scores.end(),
                                     [](auto& a, auto& b) { return a.second < b.second; });
        if (best->first == m && best->second < thr[m]) want.emplace_back(best->second, c.clip_id);
      }
      std::sort(want.begin(), want.end());
      CHECK(s.n_out[m] == want.size());
      want.resize(std::min(want.size(), n_max));
      const auto& got = s.per_machine[m];
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].clip_id == want[i].second);
    }
  }
}
