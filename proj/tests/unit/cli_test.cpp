// tests/unit/cli_test.cpp

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

// Drives the asdloop binary end to end on a tiny corpus.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "asd/model/model.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "asd_cli_test";

struct Result {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

Result run(const std::string& args) {
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(ASD_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

nlohmann::json run_config(const std::string& out) {
  nlohmann::json j;
  j["data_root"] = "data";
  j["output_root"] = out;
  j["stages"] = 2;
  j["epochs"] = 1;
  j["batch_size"] = 8;
  j["variants"] = 1;
  j["k_so"] = 4;
  j["k_ta"] = 10;
  j["pseudo_k_so"] = 4;
  j["pseudo_k_ta"] = 2;
  j["architecture"] = asd::model::ModelArchitecture::tiny(4, 16).to_json();
  return j;
}

// One corpus shared by every case; generated on first use.
void ensure_corpus() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  write(kRoot / "spec.json", R"({"machines": ["fan", "pump"], "train_source": 6, "train_target": 2,
    "test_normal_per_domain": 2, "test_anomalous_per_domain": 2,
    "external_near": 2, "external_unrelated": 3})");
  REQUIRE(run("gen-data --spec " + (kRoot / "spec.json").string() + " --seed 4 -o " +
              (kRoot / "data").string()).code == 0);
  done = true;
}

}  // namespace

TEST_CASE("cli: gen-data") {
  ensure_corpus();
  auto r = run("gen-data --spec " + (kRoot / "missing.json").string() + " -o " + (kRoot / "x").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.json") != std::string::npos);

  r = run("gen-data --spec " + (kRoot / "spec.json").string() + " --seed 4 -o " + (kRoot / "data2").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("train 16  test 16  external 5") != std::string::npos);
  for (const char* m : {"train.jsonl", "test.jsonl", "external.jsonl"})
    CHECK(slurp(kRoot / "data" / m) == slurp(kRoot / "data2" / m));

  write(kRoot / "badspec.json", R"({"machines": ["fan"]})");
  CHECK(run("gen-data --spec " + (kRoot / "badspec.json").string() + " -o " + (kRoot / "y").string()).code == 2);
  CHECK(run("gen-data").code == 2);
}

TEST_CASE("cli: iterate, score and evaluate") {
  ensure_corpus();
  write(kRoot / "run.json", run_config("out").dump(2));
  write(kRoot / "run_again.json", run_config("out_again").dump(2));
  auto r = run("iterate -c " + (kRoot / "run.json").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("AUC_all") != std::string::npos);
  REQUIRE(run("iterate -c " + (kRoot / "run_again.json").string()).code == 0);
  for (int m : {1, 2}) {
    const auto rel = fs::path("stage_" + std::to_string(m)) / "metrics.json";
    CHECK(fs::exists(kRoot / "out" / rel));
    CHECK(slurp(kRoot / "out" / rel) == slurp(kRoot / "out_again" / rel));
  }
  CHECK_FALSE(fs::exists(kRoot / "out" / "stage_3"));

  const auto ckpt = (kRoot / "out" / "stage_1" / "checkpoint.bin").string();
  // Target training clips are their own representatives.
  std::ifstream train(kRoot / "data" / "train.jsonl");
  std::string line, target_lines, unknown_machine;
  while (std::getline(train, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["domain"] == "target") target_lines += line + "\n";
    if (unknown_machine.empty()) {
      j["machine"] = "drill";
      unknown_machine = j.dump() + "\n";
    }
  }
  write(kRoot / "data" / "targets.jsonl", target_lines);
  r = run("score --checkpoint " + ckpt + " --manifest " + (kRoot / "data" / "targets.jsonl").string());
  CHECK(r.code == 0);
  std::istringstream rows(r.out);
  std::getline(rows, line);
  int n = 0;
  while (std::getline(rows, line)) {
    ++n;
    CHECK(line.substr(line.rfind('\t') + 1) == "-1.000000");
  }
  CHECK(n == 4);

  write(kRoot / "data" / "empty.jsonl", "");
  r = run("score --checkpoint " + ckpt + " --manifest " + (kRoot / "data" / "empty.jsonl").string());
  CHECK(r.code == 0);
  CHECK(r.out == "clip_id\tmachine\tdomain\tcondition\tscore\n");

  write(kRoot / "data" / "drill.jsonl", unknown_machine);
  r = run("score --checkpoint " + ckpt + " --manifest " + (kRoot / "data" / "drill.jsonl").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("drill") != std::string::npos);

  const auto test_manifest = (kRoot / "data" / "test.jsonl").string();
  const auto s1 = (kRoot / "s1.tsv").string(), s2 = (kRoot / "s2.tsv").string();
  CHECK(run("score --checkpoint " + ckpt + " --manifest " + test_manifest + " -o " + s1).code == 0);
  CHECK(run("score --checkpoint " + ckpt + " --manifest " + test_manifest + " -o " + s2).code == 0);
  CHECK(slurp(s1) == slurp(s2));
  CHECK(slurp(s1) == slurp(kRoot / "out" / "stage_1" / "scores.tsv"));

  const auto report_path = kRoot / "report.json";
  r = run("evaluate --scores " + s1 + " -o " + report_path.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("mean") != std::string::npos);
  auto report = nlohmann::json::parse(slurp(report_path));
  CHECK(report["machines"].size() == 2);

  // Single steps read the previous stage from the output root.
  CHECK(run("select-external -c " + (kRoot / "run.json").string() + " --stage 2").code == 0);
  r = run("pseudo-label -c " + (kRoot / "run.json").string() + " --stage 2");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("clip_id\tmachine\tdomain\tpseudo_class\n", 0) == 0);
  CHECK(run("train -c " + (kRoot / "run.json").string() + " --stage 2 --epochs 1").code == 0);
}

TEST_CASE("cli: config and training errors") {
  ensure_corpus();
  auto j = run_config("out_err");
  j["learning_rate"] = 0.1;
  write(kRoot / "bad.json", j.dump());
  auto r = run("iterate -c " + (kRoot / "bad.json").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("learning_rate") != std::string::npos);

  CHECK(run("iterate -c " + (kRoot / "nope.json").string()).code == 2);

  // One machine with triplets on cannot train.
  std::ifstream train(kRoot / "data" / "train.jsonl");
  std::string line, fan_only;
  while (std::getline(train, line))
    if (nlohmann::json::parse(line)["machine"] == "fan") fan_only += line + "\n";
  const auto solo = kRoot / "solo";
  write(solo / "train.jsonl", fan_only);
  fs::copy_file(kRoot / "data" / "test.jsonl", solo / "test.jsonl", fs::copy_options::overwrite_existing);
  // Paths in the manifests are relative to the corpus directory.
  fs::remove_all(solo / "audio");
  fs::create_directory_symlink(kRoot / "data" / "audio", solo / "audio");
  auto cfg = run_config("out_solo");
  cfg["data_root"] = "solo";
  cfg["stages"] = 1;
  write(kRoot / "solo.json", cfg.dump());
  r = run("iterate -c " + (kRoot / "solo.json").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("stage 1") != std::string::npos);
}
