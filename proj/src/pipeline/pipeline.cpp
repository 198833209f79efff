// src/pipeline/pipeline.cpp

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

#include "asd/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>

#include "asd/features/augment.hpp"
#include "asd/kernels/kernels.hpp"

namespace asd::pipeline {

namespace fs = std::filesystem;
using model::ModelInput;
using model::ModelState;

namespace {

constexpr std::uint64_t kBatchStream = 0x6261746368ULL;  // "batch"

// Runs body(i) for i in [0, n) on the OpenMP pool; the first exception is
// rethrown on the calling thread.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(asd_parallel_for_error)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

std::string pseudo_suffix(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%02zu", k);
  return buf;
}

std::string attribute_of(const evalio::ClipRecord& r) {
  if (!r.attribute || r.attribute->empty())
    throw InvalidArgument("clip '" + r.clip_id + "' has no attribute but attribute labels are on");
  return *r.attribute;
}

// Re-estimates every head's scale from the current batch (eval-mode
// embeddings of the unmixed inputs).
void update_scales(model::ModelState<float>& state, const losses::TrainBatch& tb) {
  const auto f = model::forward(state, tb.ss, false);
  const std::size_t n = tb.ss.size(), classes = state.class_count(), sub = state.arch.sub_clusters;
  for (std::size_t h = 0; h < 4; ++h) {
    const auto& z = h == 0 ? f.zcat.value() : f.z[h - 1].value();
    const auto& c = state.centers(h).value();
    const std::size_t d = z.dim(1), rows = classes * sub;
    std::vector<double> cosines(n * rows);
    auto norm = [d](const float* v) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += double(v[k]) * v[k];
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < n; ++i) {
      const float* zi = z.data.data() + i * d;
      const double nz = std::max(norm(zi), 1e-12);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* cr = c.data.data() + r * d;
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += double(zi[k]) * cr[k];
        cosines[i * rows + r] = dot / (nz * std::max(norm(cr), 1e-12));
      }
    }
    state.scales[h] = losses::adacos_scale(cosines, n, classes, sub, tb.labels, state.scales[h]);
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw RuntimeError("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw RuntimeError("short write to '" + p.string() + "'");
}

}  // namespace

WaveSource disk_source(const std::string& manifest_dir) {
  return [manifest_dir](const evalio::ClipRecord& r) {
    return features::read_wav(evalio::resolve_path(manifest_dir, r));
  };
}

WaveSource memory_source(const std::map<std::string, features::Waveform>& audio) {
  return [&audio](const evalio::ClipRecord& r) {
    auto it = audio.find(r.clip_id);
    if (it == audio.end()) throw RuntimeError("no in-memory audio for clip '" + r.clip_id + "'");
    return it->second;
  };
}

std::size_t Dataset::machine_index(const std::string& m) const {
  auto it = std::lower_bound(machines.begin(), machines.end(), m);
  if (it == machines.end() || *it != m) throw InvalidArgument("unknown machine '" + m + "'");
  return static_cast<std::size_t>(it - machines.begin());
}

Dataset load_dataset(std::vector<evalio::ClipRecord> train, std::vector<evalio::ClipRecord> test,
                     std::vector<evalio::ClipRecord> external, const WaveSource& source,
                     const model::ModelArchitecture& arch) {
  evalio::validate_train_manifest(train);
  if (train.empty()) throw InvalidArgument("dataset: empty training manifest");
  Dataset d;
  d.arch = arch;
  d.train = std::move(train);
  d.test = std::move(test);
  d.external = std::move(external);
  std::set<std::string> ms;
  for (const auto& r : d.train) ms.insert(r.machine);
  d.machines.assign(ms.begin(), ms.end());
  auto extract = [&](const std::vector<evalio::ClipRecord>& recs, std::vector<ModelInput>& out) {
    out.resize(recs.size());
    parallel_for(recs.size(), [&](std::size_t i) {
      out[i] = model::pool_input(features::extract_features(source(recs[i])), arch);
    });
  };
  extract(d.train, d.train_inputs);
  extract(d.test, d.test_inputs);
  extract(d.external, d.external_inputs);
  return d;
}

void build_variants(Dataset& data, const WaveSource& source, const features::TripletConfig& cfg,
                    std::size_t variants, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = data.train.size();
  data.variants.assign(n, {});
  if (variants == 0) return;
  std::vector<features::Waveform> waves(n);
  parallel_for(n, [&](std::size_t i) { waves[i] = source(data.train[i]); });
  std::vector<std::vector<std::size_t>> others(data.machines.size());
  for (std::size_t m = 0; m < data.machines.size(); ++m)
    for (std::size_t i = 0; i < n; ++i)
      if (data.train[i].machine != data.machines[m]) others[m].push_back(i);
  parallel_for(n, [&](std::size_t i) {
    const auto& pool = others[data.machine_index(data.train[i].machine)];
    if (pool.empty()) return;  // single machine: no valid noise source
    auto& tv = data.variants[i];
    for (std::size_t v = 0; v < variants; ++v) {
      Rng rng(derive_seed(seed, i, v));
      const std::size_t j = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      const double alpha = cfg.sample_alpha(rng);
      const double beta = cfg.sample_beta(rng);
      tv.positives.push_back(model::pool_input(
          features::extract_features(features::snr_mix(waves[i], waves[j], alpha)), data.arch));
      tv.negatives.push_back(model::pool_input(
          features::extract_features(features::pitch_shift(waves[i], beta)), data.arch));
    }
  });
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainItem>& items,
                                                   std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw InvalidArgument("make_batches: batch_size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].machine].push_back(i);
  for (auto& [m, g] : groups) std::shuffle(g.begin(), g.end(), rng);
  std::vector<std::size_t> order;
  order.reserve(items.size());
  for (std::size_t round = 0; order.size() < items.size(); ++round)
    for (auto& [m, g] : groups)
      if (round < g.size()) order.push_back(g[round]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += batch_size)
    batches.emplace_back(order.begin() + static_cast<long>(s),
                         order.begin() + static_cast<long>(std::min(order.size(), s + batch_size)));
  if (batches.size() >= 2) {
    std::set<std::size_t> tail_machines;
    for (auto i : batches.back()) tail_machines.insert(items[i].machine);
    if (tail_machines.size() < 2) {
      auto tail = std::move(batches.back());
      batches.pop_back();
      batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }
  }
  return batches;
}

model::ModelState<float> train(const std::vector<TrainItem>& items,
                               const std::vector<std::string>& class_names,
                               const StageConfig& cfg, TrainLog* log) {
  cfg.validate();
  auto state = model::init_model<float>(cfg.stage_seed(), class_names, cfg.arch);
  state.stage = cfg.stage;
  if (items.empty()) throw InvalidArgument("train: no training items");
  if (cfg.use_triplet) {
    std::set<std::size_t> with_variants;
    for (const auto& it : items)
      if (it.variants && !it.variants->positives.empty()) with_variants.insert(it.machine);
    if (with_variants.size() < 2)
      throw InvalidArgument(
          "train: triplet loss needs at least two machine types (positives mix in noise from a "
          "different machine); disable triplets for single-machine data");
  }
  losses::LossConfig lcfg;
  lcfg.triplet = cfg.triplet;
  lcfg.use_triplet = cfg.use_triplet;
  lcfg.mixup_prob = cfg.mixup_prob;
  ad::AdamWConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  Rng rng(derive_seed(cfg.stage_seed(), kBatchStream));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLoss acc;
    const auto batches = make_batches(items, cfg.batch_size, rng);
    for (const auto& b : batches) {
      losses::TrainBatch tb;
      for (auto idx : b) {
        const auto& it = items[idx];
        tb.ss.push_back(it.input);
        tb.labels.push_back(it.label);
        tb.machines.push_back(it.machine);
      }
      if (cfg.use_triplet) {
        std::set<std::size_t> anchor_machines;
        for (std::size_t k = 0; k < b.size(); ++k) {
          const auto* v = items[b[k]].variants;
          if (!v || v->positives.empty()) continue;
          const std::size_t pick =
              std::uniform_int_distribution<std::size_t>(0, v->positives.size() - 1)(rng);
          tb.triplet_anchor.push_back(k);
          tb.positives.push_back(&v->positives[pick]);
          tb.negatives.push_back(&v->negatives[pick]);
          anchor_machines.insert(items[b[k]].machine);
        }
        if (anchor_machines.size() < 2) {
          // Only reachable when one machine's clips fill a whole batch.
          tb.triplet_anchor.clear();
          tb.positives.clear();
          tb.negatives.clear();
        }
      }
      auto bl = losses::combined_batch_loss(state, tb, lcfg, rng, /*training=*/true);
      if (log && !log->first_batch) log->first_batch = bl.terms;
      ad::backward(bl.total);
      ad::adamw_step(state.params, adam);
      model::normalize_centers(state);
      state.params.zero_grad();
      if (cfg.adacos_dynamic) update_scales(state, tb);
      acc.l_trp += bl.terms.l_trp;
      acc.l_ss += bl.terms.l_ss;
      acc.l_mlt += bl.terms.l_mlt;
    }
    const double nb = static_cast<double>(batches.size());
    acc.l_trp /= nb;
    acc.l_ss /= nb;
    acc.l_mlt = acc.l_trp + acc.l_ss;
    if (log) log->epochs.push_back(acc);
  }
  return state;
}

cluster::Matrix embed_matrix(const model::ModelState<float>& state,
                             const std::vector<model::ModelInput>& inputs) {
  cluster::Matrix m(0, state.arch.concat_dim());
  for (const auto& e : model::embed_inputs(inputs, state)) m.push_row(std::span<const float>(e.zcat));
  return m;
}

std::map<std::string, cluster::RepresentativeSet> build_machine_representatives(
    const Dataset& data, const cluster::Matrix& emb, const StageConfig& cfg) {
  std::map<std::string, cluster::RepresentativeSet> out;
  for (const auto& machine : data.machines) {
    cluster::Matrix src(0, emb.cols), tgt(0, emb.cols);
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (data.train[i].machine != machine) continue;
      const std::span<const double> row(emb.row(i), emb.cols);
      (data.train[i].domain == "source" ? src : tgt).push_row(row);
    }
    out.emplace(machine, cluster::build_representatives(machine, src, tgt, cfg.k_so, cfg.k_ta,
                                                        derive_seed(cfg.stage_seed(), fnv1a("reps"))));
  }
  return out;
}

std::vector<evalio::ScoredClip> score_records(
    const std::vector<evalio::ClipRecord>& records, const cluster::Matrix& embeddings,
    const std::map<std::string, cluster::RepresentativeSet>& reps) {
  std::map<std::string, std::vector<std::size_t>> by_machine;
  for (std::size_t i = 0; i < records.size(); ++i) by_machine[records[i].machine].push_back(i);
  std::vector<evalio::ScoredClip> out(records.size());
  for (const auto& [machine, idx] : by_machine) {
    auto it = reps.find(machine);
    if (it == reps.end()) throw RuntimeError("no representatives for machine '" + machine + "'");
    cluster::Matrix z(0, embeddings.cols);
    for (auto i : idx) z.push_row(std::span<const double>(embeddings.row(i), embeddings.cols));
    const auto s = cluster::anomaly_scores(z, it->second);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& r = records[idx[k]];
      out[idx[k]] = {r.clip_id, r.machine, r.domain, r.condition, s[k]};
    }
  }
  return out;
}

std::string model_hash(const model::ModelState<float>& state) {
  std::string bytes;
  auto add = [&](const std::string& name, const ad::Tensor<float>& t) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(t.data.data()), t.size() * sizeof(float));
  };
  for (const auto& [name, p] : state.params.params()) add(name, p.value());
  for (const auto& [name, b] : state.bn) {
    add(name + ".mean", b.mean);
    add(name + ".var", b.var);
  }
  return hex64(fnv1a(bytes));
}

std::vector<std::string> original_labels(const Dataset& data, const StageConfig& cfg,
                                         const cluster::PseudoLabelTable* pseudo) {
  std::map<std::string, std::size_t> pseudo_of;
  if (pseudo)
    for (const auto& l : pseudo->labels) pseudo_of[l.clip_id] = l.pseudo_class;
  std::vector<std::string> out;
  out.reserve(data.train.size());
  for (const auto& r : data.train) {
    std::string label = r.machine;
    if (cfg.label_source == LabelSource::MachineAttribute) label += "_" + attribute_of(r);
    if (pseudo) {
      auto it = pseudo_of.find(r.clip_id);
      if (it == pseudo_of.end()) throw RuntimeError("clip '" + r.clip_id + "' has no pseudo-label");
      label += "_" + pseudo_suffix(it->second);
    }
    out.push_back(std::move(label));
  }
  return out;
}

namespace {

// Every label a stage can emit, so the class count does not hinge on which
// clusters happen to be populated: machine (x attribute) x pseudo slot.
std::vector<std::string> class_space(const Dataset& data, const StageConfig& cfg,
                                     const cluster::PseudoLabelTable* pseudo,
                                     const std::vector<std::string>& extra) {
  std::set<std::string> bases;
  for (const auto& r : data.train)
    bases.insert(cfg.label_source == LabelSource::MachineAttribute ? r.machine + "_" + attribute_of(r)
                                                                   : r.machine);
  std::set<std::string> names;
  for (const auto& b : bases) {
    if (!pseudo) {
      names.insert(b);
      continue;
    }
    for (std::size_t k = 0; k < pseudo->classes_per_machine(); ++k) names.insert(b + "_" + pseudo_suffix(k));
  }
  names.insert(extra.begin(), extra.end());
  return {names.begin(), names.end()};
}

std::map<std::string, double> training_thresholds(const Dataset& data, const cluster::Matrix& emb,
                                                  const std::map<std::string, cluster::RepresentativeSet>& reps) {
  const auto scored = score_records(data.train, emb, reps);
  std::map<std::string, std::vector<double>> per;
  for (const auto& s : scored) per[s.machine].push_back(s.score);
  std::map<std::string, double> out;
  for (const auto& [m, v] : per) out[m] = selector::machine_threshold(v);
  return out;
}

}  // namespace

cluster::PseudoLabelTable stage_pseudo_labels(const Dataset& data, const StageConfig& cfg,
                                              const StageArtifacts& prev) {
  const auto emb = embed_matrix(prev.model, data.train_inputs);
  std::vector<cluster::LabelInput> in;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto& r = data.train[i];
    in.push_back({r.clip_id, r.machine, r.domain, std::vector<double>(emb.row(i), emb.row(i) + emb.cols)});
  }
  return cluster::assign_pseudo_labels(in, cfg.pseudo_k_so, cfg.pseudo_k_ta,
                                       derive_seed(cfg.stage_seed(), fnv1a("pseudo")));
}

selector::Selection stage_selection(const Dataset& data, const StageConfig& cfg,
                                    const StageArtifacts& prev) {
  const auto emb = embed_matrix(prev.model, data.external_inputs);
  std::vector<selector::ExternalCandidate> cands(data.external.size());
  for (std::size_t i = 0; i < data.external.size(); ++i) {
    cands[i].clip_id = data.external[i].clip_id;
    cands[i].path = data.external[i].path;
    cands[i].tags = data.external[i].external_class;
  }
  for (const auto& [machine, reps] : prev.reps) {
    const auto s = cluster::anomaly_scores(emb, reps);
    for (std::size_t i = 0; i < cands.size(); ++i) cands[i].scores[machine] = s[i];
  }
  selector::SelectionConfig scfg;
  scfg.n_max = cfg.n_max;
  scfg.random_baseline = cfg.random_selection;
  return cfg.random_selection
             ? selector::select_random(cands, scfg, derive_seed(cfg.stage_seed(), fnv1a("random")))
             : selector::select_pseudo_anomalous(cands, prev.thresholds, scfg);
}

StageArtifacts run_stage(const Dataset& data, const StageConfig& cfg, const StageArtifacts* prev) {
  cfg.validate();
  if (cfg.stage >= 2 && !prev)
    throw InvalidArgument("run_stage: stage " + std::to_string(cfg.stage) + " needs the stage " +
                          std::to_string(cfg.stage - 1) + " artifacts");
  if (prev && prev->stage != cfg.stage - 1)
    throw InvalidArgument("run_stage: stage " + std::to_string(cfg.stage) + " was handed stage " +
                          std::to_string(prev->stage) + " artifacts");
  if (prev && model_hash(prev->model) != prev->model_hash)
    throw RuntimeError("run_stage: previous model does not match its recorded hash");
  if (cfg.use_triplet && data.variants.size() != data.train.size())
    throw InvalidArgument("run_stage: triplets are on but the augmentation pool was not built");

  StageArtifacts a;
  a.stage = cfg.stage;
  a.cfg = cfg;
  a.config_hash = hex64(fnv1a(cfg.to_json().dump()));
  if (prev) a.parent_model_hash = prev->model_hash;

  if (cfg.pseudo_active()) a.pseudo = stage_pseudo_labels(data, cfg, *prev);

  std::vector<std::pair<std::size_t, selector::Selected>> chosen;  // external index, pick
  if (cfg.external_active() && !data.external.empty()) {
    a.selection = stage_selection(data, cfg, *prev);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < data.external.size(); ++i) index[data.external[i].clip_id] = i;
    for (const auto& [m, picks] : a.selection->per_machine)
      for (const auto& p : picks) chosen.emplace_back(index.at(p.clip_id), p);
  }

  const auto labels = original_labels(data, cfg, a.pseudo ? &*a.pseudo : nullptr);
  std::vector<std::string> ext_labels;
  for (const auto& [i, p] : chosen) ext_labels.push_back(p.label);
  a.class_names = class_space(data, cfg, a.pseudo ? &*a.pseudo : nullptr, ext_labels);
  auto class_of = [&](const std::string& l) {
    return static_cast<std::size_t>(std::lower_bound(a.class_names.begin(), a.class_names.end(), l) -
                                    a.class_names.begin());
  };

  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    TrainItem it;
    it.input = &data.train_inputs[i];
    it.label = class_of(labels[i]);
    it.machine = data.machine_index(data.train[i].machine);
    if (cfg.use_triplet) it.variants = &data.variants[i];
    items.push_back(it);
  }
  for (const auto& [i, p] : chosen) {
    TrainItem it;
    it.input = &data.external_inputs[i];
    it.label = class_of(p.label);
    it.machine = data.machine_index(p.machine);
    items.push_back(it);
  }

  a.model = train(items, a.class_names, cfg, &a.log);
  a.model_hash = model_hash(a.model);

  const auto train_emb = embed_matrix(a.model, data.train_inputs);
  a.reps = build_machine_representatives(data, train_emb, cfg);
  a.thresholds = training_thresholds(data, train_emb, a.reps);
  const auto test_emb = embed_matrix(a.model, data.test_inputs);
  a.eval = evalio::evaluate_scores(score_records(data.test, test_emb, a.reps));
  return a;
}

nlohmann::json StageArtifacts::metrics() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = config_hash;
  j["model_hash"] = model_hash;
  j["parent_model_hash"] = parent_model_hash;
  j["class_count"] = class_names.size();
  j["eval"] = eval.to_json();
  j["thresholds"] = thresholds;
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : log.epochs) losses.push_back({{"l_trp", e.l_trp}, {"l_ss", e.l_ss}, {"l_mlt", e.l_mlt}});
  j["epoch_losses"] = losses;
  if (log.first_batch)
    j["first_batch"] = {{"l_trp", log.first_batch->l_trp},
                        {"l_ss", log.first_batch->l_ss},
                        {"l_mlt", log.first_batch->l_mlt}};
  if (selection) {
    nlohmann::json s;
    for (const auto& [m, v] : selection->per_machine) s["selected"][m] = v.size();
    s["n_out"] = selection->n_out;
    s["total"] = selection->total();
    s["random"] = cfg.random_selection;
    j["selection"] = s;
  }
  if (pseudo) {
    std::map<std::string, std::set<std::size_t>> used;
    for (const auto& l : pseudo->labels) used[l.machine].insert(l.pseudo_class);
    nlohmann::json p;
    for (const auto& [m, u] : used) p["used_classes"][m] = u.size();
    p["classes_per_machine"] = pseudo->classes_per_machine();
    p["warnings"] = pseudo->warnings;
    j["pseudo_labels"] = p;
  }
  return j;
}

void persist_stage(const StageArtifacts& a, const std::string& out_root) {
  const fs::path dir = fs::path(out_root) / ("stage_" + std::to_string(a.stage));
  fs::create_directories(dir);
  nlohmann::json reps = nlohmann::json::object();
  for (const auto& [m, r] : a.reps) reps[m] = r.to_json();

  model::Checkpoint ck;
  ck.state = a.model;
  ck.metadata = {{"stage", a.stage},
                 {"config_hash", a.config_hash},
                 {"model_hash", a.model_hash},
                 {"parent_model_hash", a.parent_model_hash},
                 {"representatives", reps},
                 {"thresholds", a.thresholds}};
  model::save_checkpoint((dir / "checkpoint.bin").string(), ck);
  write_text(dir / "representatives.json", reps.dump(1) + "\n");
  write_text(dir / "pseudo_labels.tsv",
             a.pseudo ? cluster::pseudo_labels_tsv(*a.pseudo) : "clip_id\tmachine\tdomain\tpseudo_class\n");
  write_text(dir / "external_selection.tsv",
             a.selection ? selector::selection_tsv(*a.selection) : "clip_id\tmachine\tscore\tlabel\n");
  write_text(dir / "scores.tsv", evalio::scores_tsv(a.eval.scores));
  write_text(dir / "metrics.json", a.metrics().dump(1) + "\n");
  write_text(dir / "config.json", a.cfg.to_json().dump(1) + "\n");
}

StageArtifacts load_stage(const std::string& out_root, int stage) {
  const fs::path dir = fs::path(out_root) / ("stage_" + std::to_string(stage));
  const fs::path cfg_path = dir / "config.json";
  std::ifstream f(cfg_path);
  if (!f) throw RuntimeError("cannot read '" + cfg_path.string() + "'");
  nlohmann::json cj;
  try {
    f >> cj;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError("'" + cfg_path.string() + "' is not valid JSON: " + e.what());
  }
  auto ck = model::load_checkpoint((dir / "checkpoint.bin").string());
  StageArtifacts a;
  a.cfg = StageConfig::from_json(cj);
  a.stage = ck.state.stage;
  if (a.stage != stage || a.cfg.stage != stage)
    throw RuntimeError("'" + dir.string() + "' holds stage " + std::to_string(a.stage) + " artifacts");
  a.model = std::move(ck.state);
  a.class_names = a.model.class_names;
  const auto& md = ck.metadata;
  try {
    a.config_hash = md.at("config_hash").get<std::string>();
    a.model_hash = md.at("model_hash").get<std::string>();
    a.parent_model_hash = md.at("parent_model_hash").get<std::string>();
    for (const auto& [m, r] : md.at("representatives").items())
      a.reps.emplace(m, cluster::RepresentativeSet::from_json(r));
    a.thresholds = md.at("thresholds").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError("checkpoint in '" + dir.string() + "' lacks stage metadata: " + e.what());
  }
  if (model_hash(a.model) != a.model_hash)
    throw RuntimeError("checkpoint in '" + dir.string() + "' does not match its recorded hash");
  return a;
}

std::vector<StageArtifacts> iterate(const Dataset& data, const StageConfig& base, int m_max,
                                    const std::string& out_root,
                                    const std::function<void(const StageArtifacts&)>& on_stage) {
  if (m_max < 1) throw InvalidArgument("iterate: M_max must be at least 1");
  std::vector<StageArtifacts> out;
  for (int m = 1; m <= m_max; ++m) {
    StageConfig cfg = base;
    cfg.stage = m;
    out.push_back(run_stage(data, cfg, out.empty() ? nullptr : &out.back()));
    if (!out_root.empty()) persist_stage(out.back(), out_root);
    if (on_stage) on_stage(out.back());
  }
  return out;
}

BaselineResult run_baseline(const Dataset& data, const StageConfig& cfg) {
  // Kept deliberately apart from run_stage/train: labels, batching, mixup and
  // scoring are spelled out again so the two paths can be checked against
  // each other.
  if (cfg.label_source != LabelSource::MachineAttribute)
    throw InvalidArgument("run_baseline: the baseline uses machine+attribute labels");
  const std::size_t n = data.train.size();
  std::vector<std::string> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = data.train[i].machine + "_" + attribute_of(data.train[i]);
  std::vector<std::string> classes(label);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<std::size_t> y(n), mach(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label[i]) - classes.begin());
    mach[i] = data.machine_index(data.train[i].machine);
  }

  auto state = model::init_model<float>(cfg.seed + static_cast<std::uint64_t>(cfg.stage), classes, cfg.arch);
  state.stage = cfg.stage;
  ad::AdamWConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  Rng rng(derive_seed(cfg.seed + static_cast<std::uint64_t>(cfg.stage), kBatchStream));
  const std::size_t nc = classes.size();

  BaselineResult out;
  bool first = true;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Per-machine shuffle, round-robin interleave, fixed-size cut.
    std::vector<std::vector<std::size_t>> per(data.machines.size());
    for (std::size_t i = 0; i < n; ++i) per[mach[i]].push_back(i);
    std::size_t longest = 0;
    for (auto& g : per) {
      std::shuffle(g.begin(), g.end(), rng);
      longest = std::max(longest, g.size());
    }
    std::vector<std::size_t> order;
    for (std::size_t r = 0; r < longest; ++r)
      for (const auto& g : per)
        if (r < g.size()) order.push_back(g[r]);
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t s = 0; s < n; s += cfg.batch_size) spans.emplace_back(s, std::min(n, s + cfg.batch_size));
    if (spans.size() >= 2) {
      const auto [s0, s1] = spans.back();
      bool mixed_machines = false;
      for (std::size_t k = s0 + 1; k < s1; ++k) mixed_machines |= mach[order[k]] != mach[order[s0]];
      if (!mixed_machines) {
        spans.pop_back();
        spans.back().second = s1;
      }
    }

    for (const auto& [s0, s1] : spans) {
      const std::size_t b = s1 - s0;
      ad::Tensor<float> targets(ad::Shape{b, nc});
      std::vector<model::ModelInput> mixed;
      mixed.reserve(b);
      std::vector<const model::ModelInput*> in(b);
      std::bernoulli_distribution coin(cfg.mixup_prob);
      std::uniform_int_distribution<std::size_t> partner(0, b - 1);
      std::uniform_real_distribution<double> ratio(0.0, 1.0);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t i = order[s0 + k];
        in[k] = &data.train_inputs[i];
        targets[k * nc + y[i]] += 1.0f;
        if (cfg.mixup_prob > 0 && coin(rng)) {
          const std::size_t j = order[s0 + partner(rng)];
          const double lambda = ratio(rng);
          mixed.push_back(model::mix_inputs(data.train_inputs[i], data.train_inputs[j], lambda));
          in[k] = &mixed.back();
          targets[k * nc + y[i]] = static_cast<float>(lambda);
          targets[k * nc + y[j]] += static_cast<float>(1.0 - lambda);
        }
      }
      auto f = model::forward(state, in, true);
      auto loss = losses::subspace_graph(f, state, targets);
      if (first) {
        out.first_batch.l_ss = static_cast<double>(loss.item());
        out.first_batch.l_mlt = out.first_batch.l_ss;
        first = false;
      }
      ad::backward(loss);
      ad::adamw_step(state.params, adam);
      model::normalize_centers(state);
      state.params.zero_grad();
    }
  }

  // Scoring: per machine, k-means representatives of source and target
  // training embeddings, negative max cosine for each test clip.
  const auto tr = model::embed_inputs(data.train_inputs, state);
  const auto te = model::embed_inputs(data.test_inputs, state);
  std::map<std::string, cluster::RepresentativeSet> reps;
  for (const auto& m : data.machines) {
    cluster::Matrix src(0, state.arch.concat_dim()), tgt(0, state.arch.concat_dim());
    for (std::size_t i = 0; i < n; ++i)
      if (data.train[i].machine == m)
        (data.train[i].domain == "source" ? src : tgt).push_row(std::span<const float>(tr[i].zcat));
    reps.emplace(m, cluster::build_representatives(m, src, tgt, cfg.k_so, cfg.k_ta,
                                                   derive_seed(cfg.seed + static_cast<std::uint64_t>(cfg.stage), fnv1a("reps"))));
  }
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& r = data.test[i];
    auto it = reps.find(r.machine);
    if (it == reps.end()) throw RuntimeError("no representatives for machine '" + r.machine + "'");
    cluster::Matrix z(0, state.arch.concat_dim());
    z.push_row(std::span<const float>(te[i].zcat));
    out.scores.push_back({r.clip_id, r.machine, r.domain, r.condition, cluster::anomaly_scores(z, it->second)[0]});
  }
  out.model = std::move(state);
  return out;
}

}  // namespace asd::pipeline
