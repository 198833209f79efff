// tools/asdloop.cpp

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

// asdloop: command-line front end. Exit codes: 0 success, 1 runtime
// failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "asd/common.hpp"
#include "asd/evalio/evalio.hpp"
#include "asd/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace asd;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write '" + path + "'");
  f << text;
}

// Config file = paths + stage count + every StageConfig key. Relative paths
// resolve against the config file's directory.
struct RunConfig {
  std::string data_root;
  std::string external_root;
  std::string output_root;
  int stages = 3;
  pipeline::StageConfig stage;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> stages;
  std::optional<std::size_t> n_max;
  std::optional<std::size_t> epochs;
  bool no_triplet = false, no_pseudo = false, no_external = false, random_selection = false;
};

RunConfig load_run_config(const Overrides& o) {
  auto j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const fs::path base = fs::absolute(o.config).parent_path();
  auto take_path = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key)) {
      if (required) throw ConfigError(std::string("config: missing '") + key + "'");
      return "";
    }
    if (!j[key].is_string()) throw ConfigError(std::string("config: '") + key + "' must be a string");
    fs::path p = j[key].get<std::string>();
    j.erase(key);
    return (p.is_absolute() ? p : base / p).lexically_normal().string();
  };
  RunConfig rc;
  rc.data_root = take_path("data_root", true);
  rc.output_root = take_path("output_root", true);
  rc.external_root = take_path("external_root", false);
  if (rc.external_root.empty()) rc.external_root = rc.data_root;
  if (j.contains("stages")) {
    if (!j["stages"].is_number_integer()) throw ConfigError("config: 'stages' must be an integer");
    rc.stages = j["stages"].get<int>();
    j.erase("stages");
  }
  if (o.seed) j["seed"] = *o.seed;
  if (o.n_max) j["n_max"] = *o.n_max;
  if (o.epochs) j["epochs"] = *o.epochs;
  if (o.no_triplet) j["use_triplet"] = false;
  if (o.no_pseudo) j["use_pseudo"] = false;
  if (o.no_external) j["use_external"] = false;
  if (o.random_selection) j["random_selection"] = true;
  if (o.stages) rc.stages = *o.stages;
  if (rc.stages < 1) throw ConfigError("config: stages must be at least 1");
  rc.stage = pipeline::StageConfig::from_json(j);
  return rc;
}

std::vector<evalio::ClipRecord> load_manifest_abs(const std::string& path) {
  auto recs = evalio::read_manifest(path);
  const auto dir = fs::path(path).parent_path().string();
  for (auto& r : recs) r.path = evalio::resolve_path(dir, r);
  return recs;
}

pipeline::Dataset open_dataset(const RunConfig& rc) {
  const auto train_path = (fs::path(rc.data_root) / "train.jsonl").string();
  const auto test_path = (fs::path(rc.data_root) / "test.jsonl").string();
  const auto ext_path = (fs::path(rc.external_root) / "external.jsonl").string();
  for (const auto& p : {train_path, test_path})
    if (!fs::exists(p)) throw ConfigError("manifest '" + p + "' does not exist");
  std::vector<evalio::ClipRecord> external;
  if (rc.stage.use_external && rc.stages > 1) {
    if (!fs::exists(ext_path)) throw ConfigError("external manifest '" + ext_path + "' does not exist");
    external = load_manifest_abs(ext_path);
  }
  const auto source = pipeline::disk_source("");
  std::fprintf(stderr, "loading features...\n");
  auto data = pipeline::load_dataset(load_manifest_abs(train_path), load_manifest_abs(test_path),
                                     std::move(external), source, rc.stage.arch);
  if (rc.stage.use_triplet) {
    std::fprintf(stderr, "building %zu triplet variants per clip...\n", rc.stage.variants);
    pipeline::build_variants(data, source, rc.stage.triplet, rc.stage.variants,
                             derive_seed(rc.stage.seed, fnv1a("variants")));
  }
  return data;
}

pipeline::StageArtifacts run_one(const pipeline::Dataset& data, pipeline::StageConfig cfg, int m,
                                 const pipeline::StageArtifacts* prev) {
  cfg.stage = m;
  std::fprintf(stderr, "stage %d: training...\n", m);
  try {
    return pipeline::run_stage(data, cfg, prev);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeError("stage " + std::to_string(m) + ": " + e.what());
  }
}

void print_stage(const pipeline::StageArtifacts& a) {
  std::printf("stage %d  classes %zu  mean AUC_all %.2f", a.stage, a.class_names.size(), a.eval.mean_auc_all());
  if (a.selection) std::printf("  external selected %zu", a.selection->total());
  std::printf("\n");
}

void print_summary(const std::vector<pipeline::StageArtifacts>& all) {
  std::printf("\n%-6s %-14s %8s %8s %8s\n", "stage", "machine", "AUC_all", "AUC_src", "AUC_tgt");
  auto opt = [](const std::optional<double>& v) {
    char buf[16];
    if (v) std::snprintf(buf, sizeof(buf), "%.2f", *v);
    else std::snprintf(buf, sizeof(buf), "-");
    return std::string(buf);
  };
  for (const auto& a : all)
    for (const auto& m : a.eval.machines)
      std::printf("%-6d %-14s %8.2f %8s %8s\n", a.stage, m.machine.c_str(), m.auc_all,
                  opt(m.auc_source).c_str(), opt(m.auc_target).c_str());
}

int cmd_gen_data(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
  evalio::CorpusSpec spec;
  if (!spec_path.empty()) {
    try {
      spec = evalio::CorpusSpec::from_json(read_json_file(spec_path));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  const auto c = evalio::generate_synthetic_corpus(spec, seed, out);
  std::printf("train %zu  test %zu  external %zu  -> %s\n", c.train.size(), c.test.size(),
              c.external.size(), out.c_str());
  return 0;
}

int cmd_iterate(const Overrides& o) {
  const auto rc = load_run_config(o);
  const auto data = open_dataset(rc);
  std::vector<pipeline::StageArtifacts> all;
  for (int m = 1; m <= rc.stages; ++m) {
    all.push_back(run_one(data, rc.stage, m, all.empty() ? nullptr : &all.back()));
    pipeline::persist_stage(all.back(), rc.output_root);
    print_stage(all.back());
  }
  print_summary(all);
  return 0;
}

int cmd_train(const Overrides& o, int m) {
  const auto rc = load_run_config(o);
  if (m < 1) throw ConfigError("--stage must be at least 1");
  const auto data = open_dataset(rc);
  std::optional<pipeline::StageArtifacts> prev;
  if (m > 1) prev = pipeline::load_stage(rc.output_root, m - 1);
  const auto a = run_one(data, rc.stage, m, prev ? &*prev : nullptr);
  pipeline::persist_stage(a, rc.output_root);
  print_stage(a);
  print_summary({a});
  return 0;
}

int cmd_select(const Overrides& o, int m, const std::string& out) {
  auto rc = load_run_config(o);
  if (m < 2) throw ConfigError("select-external needs --stage >= 2 (it uses the previous stage's model)");
  rc.stage.stage = m;
  rc.stage.use_triplet = false;  // no augmentation needed here
  rc.stages = m;
  const auto data = open_dataset(rc);
  const auto prev = pipeline::load_stage(rc.output_root, m - 1);
  const auto sel = pipeline::stage_selection(data, rc.stage, prev);
  write_output(out, selector::selection_tsv(sel));
  std::fprintf(stderr, "selected %zu external clips\n", sel.total());
  return 0;
}

int cmd_pseudo(const Overrides& o, int m, const std::string& out) {
  auto rc = load_run_config(o);
  if (m < 2) throw ConfigError("pseudo-label needs --stage >= 2 (it uses the previous stage's model)");
  rc.stage.stage = m;
  rc.stage.use_triplet = false;
  rc.stage.use_external = false;
  const auto data = open_dataset(rc);
  const auto prev = pipeline::load_stage(rc.output_root, m - 1);
  const auto table = pipeline::stage_pseudo_labels(data, rc.stage, prev);
  write_output(out, cluster::pseudo_labels_tsv(table));
  for (const auto& w : table.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& manifest, const std::string& out) {
  if (!fs::exists(ckpt_path)) throw ConfigError("checkpoint '" + ckpt_path + "' does not exist");
  if (!fs::exists(manifest)) throw ConfigError("manifest '" + manifest + "' does not exist");
  const auto ck = model::load_checkpoint(ckpt_path);
  if (!ck.metadata.contains("representatives"))
    throw RuntimeError("checkpoint '" + ckpt_path + "' carries no representatives");
  std::map<std::string, cluster::RepresentativeSet> reps;
  for (const auto& [m, r] : ck.metadata["representatives"].items())
    reps.emplace(m, cluster::RepresentativeSet::from_json(r));
  const auto records = load_manifest_abs(manifest);
  std::vector<model::ModelInput> inputs(records.size());
  const auto source = pipeline::disk_source("");
  for (std::size_t i = 0; i < records.size(); ++i)
    inputs[i] = model::pool_input(features::extract_features(source(records[i])), ck.state.arch);
  const auto emb = pipeline::embed_matrix(ck.state, inputs);
  write_output(out, evalio::scores_tsv(pipeline::score_records(records, emb, reps)));
  return 0;
}

std::vector<evalio::ScoredClip> read_scores_tsv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::string line;
  std::getline(f, line);
  if (line.rfind("clip_id\tmachine\tdomain\tcondition\tscore", 0) != 0)
    throw RuntimeError("'" + path + "' is not a score file");
  std::vector<evalio::ScoredClip> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    evalio::ScoredClip c;
    std::string score;
    if (!std::getline(ss, c.clip_id, '\t') || !std::getline(ss, c.machine, '\t') ||
        !std::getline(ss, c.domain, '\t') || !std::getline(ss, c.condition, '\t') ||
        !std::getline(ss, score, '\t'))
      throw RuntimeError(path + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      c.score = std::stod(score);
    } catch (const std::exception&) {
      throw RuntimeError(path + ":" + std::to_string(lineno) + ": bad score '" + score + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

int cmd_evaluate(const std::string& scores, const std::string& out) {
  const auto report = evalio::evaluate_scores(read_scores_tsv(scores));
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& m : report.machines)
    std::printf("%-14s AUC_all %6.2f\n", m.machine.c_str(), m.auc_all);
  std::printf("%-14s AUC_all %6.2f\n", "mean", report.mean_auc_all());
  if (!out.empty()) write_output(out, report.to_json().dump(1) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asdloop: iterative anomalous sound detection training"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);

  Overrides o;
  auto add_run_flags = [&](CLI::App* sc, bool with_stages) {
    sc->add_option("-c,--config", o.config, "Run configuration (JSON)")->required();
    sc->add_option("--seed", o.seed, "Base seed");
    sc->add_option("--n-max", o.n_max, "Cap on external clips per machine");
    sc->add_option("--epochs", o.epochs, "Training epochs per stage");
    sc->add_flag("--no-triplet", o.no_triplet, "Drop the triplet loss");
    sc->add_flag("--no-pseudo", o.no_pseudo, "Keep original labels in later stages");
    sc->add_flag("--no-external", o.no_external, "Do not add external clips");
    sc->add_flag("--random-selection", o.random_selection, "Pick external clips at random");
    if (with_stages) sc->add_option("--stages", o.stages, "Number of stages");
  };

  std::string spec_path, out_dir, out_file, ckpt, manifest, scores;
  std::uint64_t gen_seed = 0;
  int stage = 1;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
  gen->add_option("--spec", spec_path, "Corpus spec (JSON); defaults when omitted");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("-o,--out", out_dir, "Output directory")->required();

  auto* iter = app.add_subcommand("iterate", "Run stages 1..M");
  add_run_flags(iter, true);

  auto* trn = app.add_subcommand("train", "Run one stage (stage M > 1 reads stage M-1 from the output root)");
  add_run_flags(trn, false);
  trn->add_option("--stage", stage, "Stage index");

  auto* sel = app.add_subcommand("select-external", "Select external clips for stage M");
  add_run_flags(sel, false);
  sel->add_option("--stage", stage, "Stage index (>= 2)")->required();
  sel->add_option("-o,--out", out_file, "Output TSV (default stdout)");

  auto* pl = app.add_subcommand("pseudo-label", "Pseudo-label training clips for stage M");
  add_run_flags(pl, false);
  pl->add_option("--stage", stage, "Stage index (>= 2)")->required();
  pl->add_option("-o,--out", out_file, "Output TSV (default stdout)");

  auto* sc = app.add_subcommand("score", "Score a manifest with a stage checkpoint");
  sc->add_option("--checkpoint", ckpt, "checkpoint.bin")->required();
  sc->add_option("--manifest", manifest, "Manifest (JSONL)")->required();
  sc->add_option("-o,--out", out_file, "Output TSV (default stdout)");

  auto* ev = app.add_subcommand("evaluate", "AUC report from a score TSV");
  ev->add_option("--scores", scores, "Score TSV")->required();
  ev->add_option("-o,--out", out_file, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    set_thread_count(threads);
    if (*gen) return cmd_gen_data(spec_path, gen_seed, out_dir);
    if (*iter) return cmd_iterate(o);
    if (*trn) return cmd_train(o, stage);
    if (*sel) return cmd_select(o, stage, out_file);
    if (*pl) return cmd_pseudo(o, stage, out_file);
    if (*sc) return cmd_score(ckpt, manifest, out_file);
    if (*ev) return cmd_evaluate(scores, out_file);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
