// include/asd/selector/selector.hpp

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

// Picks pseudo-anomalous clips from an external corpus: every candidate is
// scored against each machine's representatives, assigned to its closest
// machine, and kept when it scores strictly below that machine's worst
// training score.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "asd/common.hpp"

namespace asd::selector {

struct SelectionConfig {
  std::size_t n_max = 1000;
  bool random_baseline = false;
  void validate() const;
};

struct ExternalCandidate {
  std::string clip_id;
  std::string path;
  std::vector<std::string> tags;  // external classes in corpus order
  std::map<std::string, double> scores;  // machine -> anomaly score

  /// First tag; "unknown" when the clip carries none.
  std::string external_class() const;
  /// Machine with the lowest score; ties go to the lexicographically first.
  std::string assigned_machine() const;
};

struct Selected {
  std::string clip_id;
  std::string path;
  std::string machine;
  std::string external_class;
  double score = 0;
  std::string label;  // "{machine}_{external_class}"
};

struct Selection {
  std::map<std::string, std::vector<Selected>> per_machine;  // ascending score
  std::map<std::string, std::size_t> n_out;  // candidates passing the threshold

  std::size_t total() const;
  /// Sorted distinct labels over all machines.
  std::vector<std::string> labels() const;
};

std::string make_label(const std::string& machine, const std::string& external_class);

/// Maximum training score of one machine; an empty list throws.
double machine_threshold(const std::vector<double>& train_scores);

/// Per machine: keep its assigned candidates with score < threshold, sort
/// ascending (clip id breaks ties) and take the first min(N_out, N_max).
/// Machines without a threshold ignore their candidates.
Selection select_pseudo_anomalous(const std::vector<ExternalCandidate>& candidates,
                                  const std::map<std::string, double>& thresholds,
                                  const SelectionConfig& cfg);

/// Per machine, a uniform sample without replacement of min(pool, N_max)
/// candidates scored for that machine, ignoring thresholds and assignment. A
/// clip may be picked under several machines.
Selection select_random(const std::vector<ExternalCandidate>& candidates,
                        const SelectionConfig& cfg, std::uint64_t seed);

/// Header plus "clip_id machine score label" rows, scores with 6 decimals.
std::string selection_tsv(const Selection& s);

}  // namespace asd::selector
