// tests/unit/pipeline_test.cpp

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

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "asd/pipeline/pipeline.hpp"

using namespace asd;
using namespace asd::pipeline;
namespace fs = std::filesystem;

namespace {

evalio::CorpusSpec small_spec(std::size_t machines, std::size_t train_source = 8) {
  evalio::CorpusSpec s;
  const char* names[] = {"fan", "pump", "slider", "valve", "gearbox", "bearing", "toycar"};
  s.machines.assign(names, names + machines);
  s.train_source = train_source;
  s.train_target = 2;
  s.test_normal_per_domain = 2;
  s.test_anomalous_per_domain = 2;
  s.external_near = 4;
  s.external_unrelated = 6;
  return s;
}

model::ModelArchitecture test_arch() { return model::ModelArchitecture::tiny(4, 16); }

Dataset build(std::size_t machines, bool variants, std::size_t train_source = 8) {
  auto c = evalio::generate_synthetic_corpus(small_spec(machines, train_source), 3, "", true);
  auto src = memory_source(c.audio);
  auto d = load_dataset(c.train, c.test, c.external, src, test_arch());
  if (variants) build_variants(d, src, features::TripletConfig{}, 1, 3);
  return d;
}

const Dataset& two_machines() {
  static const Dataset d = build(2, true);
  return d;
}

StageConfig quick_cfg() {
  StageConfig c;
  c.arch = test_arch();
  c.epochs = 2;
  c.batch_size = 8;
  c.variants = 1;
  c.k_so = 4;
  c.k_ta = 2;
  c.pseudo_k_so = 4;
  c.pseudo_k_ta = 2;
  return c;
}

}  // namespace

TEST_CASE("stage config json") {
  StageConfig c = quick_cfg();
  c.seed = 42;
  c.label_source = LabelSource::MachineAttribute;
  auto back = StageConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  auto j = c.to_json();
  j["learning_rate"] = 0.1;
  CHECK_THROWS_AS(StageConfig::from_json(j), ConfigError);
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(quick_cfg().stage_seed() == 1);
}

TEST_CASE("stratified batches") {
  std::vector<TrainItem> items(10);
  for (std::size_t i = 0; i < 10; ++i) items[i].machine = i < 7 ? 0 : 1;
  Rng rng(1);
  auto batches = make_batches(items, 4, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    std::set<std::size_t> machines;
    for (auto i : b) {
      seen.insert(i);
      machines.insert(items[i].machine);
    }
    CHECK(machines.size() >= 2);
  }
  CHECK(seen.size() == 10);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 10);

  Rng a(5), b(5);
  CHECK(make_batches(items, 3, a) == make_batches(items, 3, b));
}

TEST_CASE("training") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < d.train.size(); ++i)
    items.push_back({&d.train_inputs[i], d.machine_index(d.train[i].machine),
                     d.machine_index(d.train[i].machine), &d.variants[i]});
  const std::vector<std::string> classes{"fan", "pump"};

  SUBCASE("zero epochs returns the initialisation") {
    cfg.epochs = 0;
    auto m = train(items, classes, cfg);
    CHECK(model_hash(m) == model_hash(model::init_model<float>(cfg.stage_seed(), classes, cfg.arch)));
  }
  SUBCASE("deterministic and the loss goes down") {
    cfg.epochs = 12;
    TrainLog log;
    auto m1 = train(items, classes, cfg, &log);
    auto m2 = train(items, classes, cfg);
    CHECK(model_hash(m1) == model_hash(m2));
    REQUIRE(log.epochs.size() == 12);
    REQUIRE(log.first_batch.has_value());
    CHECK(log.epochs.back().l_mlt < log.epochs.front().l_mlt);
    CHECK(log.epochs.front().l_trp > 0);
  }
  SUBCASE("triplets need two machines") {
    std::vector<TrainItem> one;
    for (const auto& it : items)
      if (it.machine == 0) one.push_back(it);
    CHECK_THROWS_AS(train(one, {"fan"}, cfg), InvalidArgument);
    cfg.use_triplet = false;
    CHECK_NOTHROW(train(one, {"fan"}, cfg));
  }
}

TEST_CASE("class counts and label strings across stages") {
  const auto d = build(7, false);
  auto cfg = quick_cfg();
  cfg.use_triplet = false;
  cfg.use_external = false;
  cfg.epochs = 1;
  cfg.pseudo_k_so = 16;
  cfg.pseudo_k_ta = 4;
  auto s1 = run_stage(d, cfg, nullptr);
  CHECK(s1.class_names.size() == 7);
  cfg.stage = 2;
  auto s2 = run_stage(d, cfg, &s1);
  CHECK(s2.class_names.size() == 140);
  CHECK(s2.model.class_count() == 140);

  cfg.label_source = LabelSource::MachineAttribute;
  auto labels = original_labels(d, cfg, &*s2.pseudo);
  const std::regex shape("[a-z]+_a[0-2]_p[0-9]{2}");
  for (const auto& l : labels) CHECK(std::regex_match(l, shape));
}

TEST_CASE("stage lineage") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  cfg.epochs = 1;
  cfg.stage = 2;
  CHECK_THROWS_AS(run_stage(d, cfg, nullptr), InvalidArgument);
  cfg.stage = 1;
  auto s1 = run_stage(d, cfg, nullptr);
  cfg.stage = 3;
  CHECK_THROWS_AS(run_stage(d, cfg, &s1), InvalidArgument);
  cfg.stage = 2;
  auto tampered = s1;
  tampered.model = s1.model.clone();
  tampered.model.params.get(model::head_name(1) + ".centers").mutable_value()[0] += 1.0f;
  CHECK_THROWS_AS(run_stage(d, cfg, &tampered), RuntimeError);
  auto s2 = run_stage(d, cfg, &s1);
  CHECK(s2.parent_model_hash == s1.model_hash);
  CHECK(s2.selection.has_value());
  CHECK(s2.pseudo.has_value());
}

TEST_CASE("triplets change the stage-2 pseudo-labels") {
  const auto d = build(2, true, 36);
  auto cfg = quick_cfg();
  cfg.epochs = 3;
  // More clusters than attributes, so the split follows the embedding geometry.
  cfg.pseudo_k_so = 8;
  auto with = run_stage(d, cfg, nullptr);
  cfg.use_triplet = false;
  auto without = run_stage(d, cfg, nullptr);
  cfg.stage = 2;
  CHECK(with.model_hash != without.model_hash);
  auto pw = stage_pseudo_labels(d, cfg, with);
  auto po = stage_pseudo_labels(d, cfg, without);
  bool differ = false;
  for (std::size_t i = 0; i < pw.labels.size(); ++i)
    differ |= pw.labels[i].pseudo_class != po.labels[i].pseudo_class;
  CHECK(differ);
}

TEST_CASE("iterate") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  cfg.epochs = 1;
  auto one = iterate(d, cfg, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].model_hash == run_stage(d, cfg, nullptr).model_hash);

  int calls = 0;
  auto three = iterate(d, cfg, 3, "", [&](const StageArtifacts&) { ++calls; });
  REQUIRE(three.size() == 3);
  CHECK(calls == 3);
  for (int m = 0; m < 3; ++m) CHECK(three[m].stage == m + 1);
  CHECK(three[2].parent_model_hash == three[1].model_hash);
  CHECK_THROWS_AS(iterate(d, cfg, 0), InvalidArgument);
}

TEST_CASE("persisted stages load back and metrics are reproducible") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  cfg.epochs = 1;
  const auto root = fs::temp_directory_path() / "asd_persist_test";
  fs::remove_all(root);
  auto run = iterate(d, cfg, 2, root.string());
  for (const char* f : {"checkpoint.bin", "representatives.json", "pseudo_labels.tsv",
                        "external_selection.tsv", "scores.tsv", "metrics.json", "config.json"})
    CHECK(fs::exists(root / "stage_2" / f));

  auto back = load_stage(root.string(), 1);
  CHECK(back.model_hash == run[0].model_hash);
  CHECK(back.thresholds == run[0].thresholds);
  CHECK(back.reps.at("fan").source.data == run[0].reps.at("fan").source.data);

  // Stage 2 from the reloaded stage 1 is the same stage 2.
  cfg.stage = 2;
  auto again = run_stage(d, cfg, &back);
  CHECK(again.metrics().dump() == run[1].metrics().dump());
  CHECK_THROWS_AS(load_stage(root.string(), 5), RuntimeError);
  fs::remove_all(root);
}

TEST_CASE("scoring needs representatives for every machine") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  cfg.epochs = 0;
  auto s1 = run_stage(d, cfg, nullptr);
  auto reps = s1.reps;
  reps.erase("pump");
  const auto emb = embed_matrix(s1.model, d.test_inputs);
  try {
    score_records(d.test, emb, reps);
    FAIL("expected an error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("pump") != std::string::npos);
  }
}

TEST_CASE("flags off reduces to the standalone baseline") {
  const auto& d = two_machines();
  auto cfg = quick_cfg();
  cfg.epochs = 2;
  cfg.use_triplet = false;
  cfg.use_pseudo = false;
  cfg.use_external = false;
  cfg.label_source = LabelSource::MachineAttribute;
  auto stage = run_stage(d, cfg, nullptr);
  auto base = run_baseline(d, cfg);
  REQUIRE(stage.log.first_batch.has_value());
  CHECK(stage.log.first_batch->l_ss == base.first_batch.l_ss);
  CHECK(stage.log.first_batch->l_mlt == base.first_batch.l_mlt);
  CHECK(model_hash(stage.model) == model_hash(base.model));
  REQUIRE(stage.eval.scores.size() == base.scores.size());
  for (std::size_t i = 0; i < base.scores.size(); ++i) {
    CHECK(stage.eval.scores[i].clip_id == base.scores[i].clip_id);
    CHECK(stage.eval.scores[i].score == base.scores[i].score);
  }
}
