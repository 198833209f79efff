// include/asd/pipeline/pipeline.hpp

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

// Training and the iterative stage protocol. Stage 1 trains on the original
// labels; stage M >= 2 uses the stage M-1 model to pick pseudo-anomalous
// external clips and k-means pseudo-labels, then retrains from scratch.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/cluster/cluster.hpp"
#include "asd/evalio/evalio.hpp"
#include "asd/losses/losses.hpp"
#include "asd/model/model.hpp"
#include "asd/selector/selector.hpp"

namespace asd::pipeline {

enum class LabelSource { MachineOnly, MachineAttribute };

std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

struct StageConfig {
  int stage = 1;
  bool use_triplet = true;
  bool use_pseudo = true;
  bool use_external = true;
  bool random_selection = false;
  LabelSource label_source = LabelSource::MachineOnly;
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double mixup_prob = 0.5;
  std::uint64_t seed = 0;
  std::size_t n_max = 1000;
  std::size_t k_so = 16;         // representatives
  std::size_t k_ta = 10;
  std::size_t pseudo_k_so = 16;  // pseudo-labels
  std::size_t pseudo_k_ta = 4;
  std::size_t variants = 2;      // cached positives/negatives per training clip
  bool adacos_dynamic = false;
  features::TripletConfig triplet;
  model::ModelArchitecture arch = model::ModelArchitecture::compact();

  void validate() const;
  /// Seed of stage M's fresh initialisation: seed + M.
  std::uint64_t stage_seed() const { return seed + static_cast<std::uint64_t>(stage); }
  /// Stage 1 never consumes pseudo-labels or external data.
  bool pseudo_active() const { return stage >= 2 && use_pseudo; }
  bool external_active() const { return stage >= 2 && use_external; }

  nlohmann::json to_json() const;
  /// Unknown keys throw ConfigError.
  static StageConfig from_json(const nlohmann::json& j);
};

/// Loads the waveform behind a manifest record.
using WaveSource = std::function<features::Waveform(const evalio::ClipRecord&)>;

WaveSource disk_source(const std::string& manifest_dir);
WaveSource memory_source(const std::map<std::string, features::Waveform>& audio);

/// Cached positive (noise-mixed) and negative (pitch-shifted) inputs of one
/// training clip.
struct TripletVariants {
  std::vector<model::ModelInput> positives;
  std::vector<model::ModelInput> negatives;
};

/// Pooled features of every clip plus the augmentation pool. Built once and
/// shared by all stages of a run; nothing here depends on a model.
struct Dataset {
  model::ModelArchitecture arch;
  std::vector<evalio::ClipRecord> train, test, external;
  std::vector<model::ModelInput> train_inputs, test_inputs, external_inputs;
  std::vector<TripletVariants> variants;  // parallel to train; may be empty
  std::vector<std::string> machines;      // sorted

  std::size_t machine_index(const std::string& m) const;
};

/// Extracts and pools features. The training split must be normal clips only.
Dataset load_dataset(std::vector<evalio::ClipRecord> train, std::vector<evalio::ClipRecord> test,
                     std::vector<evalio::ClipRecord> external, const WaveSource& source,
                     const model::ModelArchitecture& arch);

/// Builds `variants` triplet variants per training clip. Positive noise comes
/// from a uniformly drawn training clip of another machine with alpha ~
/// U[alpha range]; negatives use beta ~ +-U[beta range] semitones.
void build_variants(Dataset& data, const WaveSource& source, const features::TripletConfig& cfg,
                    std::size_t variants, std::uint64_t seed);

struct TrainItem {
  const model::ModelInput* input = nullptr;
  std::size_t label = 0;
  std::size_t machine = 0;
  const TripletVariants* variants = nullptr;  // null for external clips
};

struct EpochLoss {
  double l_trp = 0, l_ss = 0, l_mlt = 0;
};

struct TrainLog {
  std::vector<EpochLoss> epochs;
  std::optional<losses::LossTerms> first_batch;
};

/// Stratified batches: items are shuffled within each machine, interleaved
/// round-robin across machines, cut into batch_size chunks; a trailing chunk
/// holding fewer than two machines is merged into the previous one.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainItem>& items,
                                                   std::size_t batch_size, Rng& rng);

/// Trains a fresh model (seed = cfg.stage_seed()) for cfg.epochs epochs of
/// AdamW on L_mlt (L_ss alone without triplets). Deterministic.
model::ModelState<float> train(const std::vector<TrainItem>& items,
                               const std::vector<std::string>& class_names,
                               const StageConfig& cfg, TrainLog* log = nullptr);

/// Embeddings (z_cat) of many inputs as a matrix.
cluster::Matrix embed_matrix(const model::ModelState<float>& state,
                             const std::vector<model::ModelInput>& inputs);

/// Representatives per machine from the original training clips only.
std::map<std::string, cluster::RepresentativeSet> build_machine_representatives(
    const Dataset& data, const cluster::Matrix& train_embeddings, const StageConfig& cfg);

/// Scores of every test clip against its machine's representatives. A
/// machine without representatives throws RuntimeError naming it.
std::vector<evalio::ScoredClip> score_records(
    const std::vector<evalio::ClipRecord>& records, const cluster::Matrix& embeddings,
    const std::map<std::string, cluster::RepresentativeSet>& reps);

struct StageArtifacts {
  int stage = 1;
  StageConfig cfg;
  std::string config_hash;
  std::string model_hash;
  std::string parent_model_hash;  // empty for stage 1
  model::ModelState<float> model;
  std::vector<std::string> class_names;
  std::map<std::string, cluster::RepresentativeSet> reps;
  std::map<std::string, double> thresholds;  // max training score per machine
  std::optional<cluster::PseudoLabelTable> pseudo;
  std::optional<selector::Selection> selection;
  evalio::EvalReport eval;
  TrainLog log;

  nlohmann::json metrics() const;
};

/// Hash of the model's parameters and batch-norm statistics.
std::string model_hash(const model::ModelState<float>& state);

/// Training labels of the original clips for a stage. With pseudo-labels the
/// cluster index is appended ("fan_p03", or "fan_a1_p03" with attributes).
std::vector<std::string> original_labels(const Dataset& data, const StageConfig& cfg,
                                         const cluster::PseudoLabelTable* pseudo);

/// Pseudo-labels of the training clips from the previous stage's embeddings.
cluster::PseudoLabelTable stage_pseudo_labels(const Dataset& data, const StageConfig& cfg,
                                              const StageArtifacts& prev);
/// External clips picked with the previous stage's model, representatives
/// and thresholds (or at random with cfg.random_selection).
selector::Selection stage_selection(const Dataset& data, const StageConfig& cfg,
                                    const StageArtifacts& prev);

/// Stage M. M >= 2 requires `prev` from stage M-1.
StageArtifacts run_stage(const Dataset& data, const StageConfig& cfg, const StageArtifacts* prev);

/// Writes stage_<M>/{checkpoint.bin, representatives.json, pseudo_labels.tsv,
/// external_selection.tsv, scores.tsv, metrics.json, config.json}.
void persist_stage(const StageArtifacts& a, const std::string& out_root);

/// Reads back what persist_stage wrote: model, representatives, thresholds
/// and config. Evaluation results and logs are not restored.
StageArtifacts load_stage(const std::string& out_root, int stage);

/// Stages 1..m_max; each stage M > 1 consumes stage M-1. With out_root set,
/// every stage is persisted as it finishes.
std::vector<StageArtifacts> iterate(const Dataset& data, const StageConfig& base, int m_max,
                                    const std::string& out_root = "",
                                    const std::function<void(const StageArtifacts&)>& on_stage = {});

/// Reference implementation of the plain baseline (L_ss with mixup,
/// machine or machine+attribute labels, no triplets, no pseudo-labels, no
/// external data), kept separate from `train` so the two can be compared.
struct BaselineResult {
  model::ModelState<float> model;
  losses::LossTerms first_batch;
  std::vector<evalio::ScoredClip> scores;
};
BaselineResult run_baseline(const Dataset& data, const StageConfig& cfg);

}  // namespace asd::pipeline
