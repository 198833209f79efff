// src/selector/selector.cpp

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

#include "asd/selector/selector.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

namespace asd::selector {
namespace {

Selected make_selected(const ExternalCandidate& c, const std::string& machine) {
  Selected s;
  s.clip_id = c.clip_id;
  s.path = c.path;
  s.machine = machine;
  s.external_class = c.external_class();
  s.score = c.scores.at(machine);
  s.label = make_label(machine, s.external_class);
  return s;
}

std::map<std::string, std::vector<const ExternalCandidate*>> by_machine(
    const std::vector<ExternalCandidate>& candidates) {
  std::map<std::string, std::vector<const ExternalCandidate*>> out;
  for (const auto& c : candidates) out[c.assigned_machine()].push_back(&c);
  return out;
}

}  // namespace

void SelectionConfig::validate() const {
  if (n_max == 0) throw InvalidArgument("selection: n_max must be at least 1");
}

std::string ExternalCandidate::external_class() const {
  return tags.empty() ? std::string("unknown") : tags.front();
}

std::string ExternalCandidate::assigned_machine() const {
  if (scores.empty()) throw InvalidArgument("candidate '" + clip_id + "' has no scores");
  auto best = scores.begin();
  for (auto it = scores.begin(); it != scores.end(); ++it)
    if (it->second < best->second) best = it;
  return best->first;
}

std::size_t Selection::total() const {
  std::size_t n = 0;
  for (const auto& [m, v] : per_machine) n += v.size();
  return n;
}

std::vector<std::string> Selection::labels() const {
  std::set<std::string> s;
  for (const auto& [m, v] : per_machine)
    for (const auto& x : v) s.insert(x.label);
  return {s.begin(), s.end()};
}

std::string make_label(const std::string& machine, const std::string& external_class) {
  return machine + "_" + external_class;
}

double machine_threshold(const std::vector<double>& train_scores) {
  if (train_scores.empty()) throw InvalidArgument("machine_threshold: no training scores");
  return *std::max_element(train_scores.begin(), train_scores.end());
}

Selection select_pseudo_anomalous(const std::vector<ExternalCandidate>& candidates,
                                  const std::map<std::string, double>& thresholds,
                                  const SelectionConfig& cfg) {
  cfg.validate();
  Selection out;
  for (const auto& [machine, pool] : by_machine(candidates)) {
    auto th = thresholds.find(machine);
    if (th == thresholds.end()) continue;
    std::vector<const ExternalCandidate*> below;
    for (const auto* c : pool)
      if (c->scores.at(machine) < th->second) below.push_back(c);
    std::sort(below.begin(), below.end(), [&](const auto* a, const auto* b) {
      const double sa = a->scores.at(machine), sb = b->scores.at(machine);
      return sa != sb ? sa < sb : a->clip_id < b->clip_id;
    });
    out.n_out[machine] = below.size();
    const std::size_t n_ex = std::min(below.size(), cfg.n_max);
    auto& dst = out.per_machine[machine];
    for (std::size_t i = 0; i < n_ex; ++i) dst.push_back(make_selected(*below[i], machine));
  }
  return out;
}

Selection select_random(const std::vector<ExternalCandidate>& candidates,
                        const SelectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Selection out;
  // Each machine samples the whole pool, not just the clips assigned to it,
  // so the expected share of any clip subset equals its share of the pool.
  std::map<std::string, std::vector<const ExternalCandidate*>> scored;
  for (const auto& c : candidates)
    for (const auto& [m, s] : c.scores) scored[m].push_back(&c);
  for (const auto& [machine, pool] : scored) {
    std::vector<const ExternalCandidate*> picked;
    Rng rng(derive_seed(seed, fnv1a(machine)));
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked),
                static_cast<long>(std::min(pool.size(), cfg.n_max)), rng);
    std::sort(picked.begin(), picked.end(), [&](const auto* a, const auto* b) {
      const double sa = a->scores.at(machine), sb = b->scores.at(machine);
      return sa != sb ? sa < sb : a->clip_id < b->clip_id;
    });
    out.n_out[machine] = pool.size();
    auto& dst = out.per_machine[machine];
    for (const auto* c : picked) dst.push_back(make_selected(*c, machine));
  }
  return out;
}

std::string selection_tsv(const Selection& s) {
  std::ostringstream os;
  os << "clip_id\tmachine\tscore\tlabel\n";
  char buf[64];
  for (const auto& [m, v] : s.per_machine)
    for (const auto& x : v) {
      std::snprintf(buf, sizeof(buf), "%.6f", x.score);
      os << x.clip_id << '\t' << x.machine << '\t' << buf << '\t' << x.label << '\n';
    }
  return os.str();
}

}  // namespace asd::selector
