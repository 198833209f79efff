// include/asd/evalio/evalio.hpp

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

// Manifests, AUC evaluation, score files and the synthetic corpus generator.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/common.hpp"
#include "asd/features/audio.hpp"

namespace asd::evalio {

struct ClipRecord {
  std::string clip_id;
  std::string path;  // relative to the manifest's directory unless absolute
  std::string machine;
  std::string domain = "source";  // source | target
  std::string split = "train";    // train | test | external
  std::string condition = "normal";  // normal | anomalous | unknown
  std::optional<std::string> attribute;
  std::vector<std::string> external_class;  // tags in corpus order

  nlohmann::json to_json() const;
  /// Unknown fields are ignored; a missing clip_id falls back to the file stem.
  static ClipRecord from_json(const nlohmann::json& j);
};

std::vector<ClipRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ClipRecord>& records);
/// Resolves a record's path against the manifest directory.
std::string resolve_path(const std::string& manifest_dir, const ClipRecord& r);

/// Every record must be a normal clip of the training split with a machine;
/// throws InvalidArgument naming the first violation.
void validate_train_manifest(const std::vector<ClipRecord>& records);

/// Mann-Whitney AUC in percent: the share of (normal, anomalous) pairs where
/// the anomalous score is higher, ties counting one half.
double auc(const std::vector<double>& normal, const std::vector<double>& anomalous);

struct ScoredClip {
  std::string clip_id;
  std::string machine;
  std::string domain;
  std::string condition;
  double score = 0;
};

struct MachineReport {
  std::string machine;
  double auc_all = 0;
  std::optional<double> auc_source;
  std::optional<double> auc_target;
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
};

struct EvalReport {
  std::vector<MachineReport> machines;  // sorted by machine name
  std::vector<ScoredClip> scores;
  std::vector<std::string> warnings;

  double mean_auc_all() const;
  nlohmann::json to_json() const;
};

/// AUC_all over each machine's test clips, and within-domain AUCs (that
/// domain's normals against that domain's anomalies). Machines lacking
/// either class are omitted with a warning.
EvalReport evaluate_scores(const std::vector<ScoredClip>& scores);

/// Header plus "clip_id machine domain condition score" rows, 6 decimals.
std::string scores_tsv(const std::vector<ScoredClip>& scores);

// Synthetic corpus ----------------------------------------------------------

struct CorpusSpec {
  std::vector<std::string> machines{"fan", "pump", "slider", "valve"};
  std::size_t attributes = 3;
  double clip_seconds = 6.0;
  std::size_t train_source = 110;
  std::size_t train_target = 10;
  std::size_t test_normal_per_domain = 10;
  std::size_t test_anomalous_per_domain = 10;
  std::size_t external_near = 50;
  std::size_t external_unrelated = 350;
  double detune = 0.04;          // relative shift of the dominant partial
  double transient_prob = 0.5;   // chance an anomaly also carries clicks
  double attribute_spread = 0.05;  // relative f0 offset between attributes
  double target_noise_gain = 3.0;  // target noise level relative to source
  double near_f0_shift = 0.12;   // relative f0 offset of near-machine clips

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys throw ConfigError.
  static CorpusSpec from_json(const nlohmann::json& j);
};

struct ClipTruth {
  double dominant_hz = 0;   // frequency of the dominant partial as generated
  double nominal_hz = 0;    // where it sits for a normal clip of that setting
  bool near_machine = false;
  std::string near_to;      // machine a near-machine clip imitates
};

struct Corpus {
  std::vector<ClipRecord> train, test, external;
  std::map<std::string, ClipTruth> truth;
  std::map<std::string, features::Waveform> audio;  // only when kept in memory
};

/// Deterministic in (spec, seed). With out_dir non-empty, writes WAVs plus
/// train.jsonl, test.jsonl and external.jsonl there; with keep_audio the
/// waveforms also stay in memory.
Corpus generate_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir, bool keep_audio = false);

}  // namespace asd::evalio
