// tests/unit/evalio_test.cpp

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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "asd/evalio/evalio.hpp"
#include "asd/features/spectral.hpp"

using namespace asd;
using namespace asd::evalio;
namespace fs = std::filesystem;

namespace {

double pair_count_auc(const std::vector<double>& n, const std::vector<double>& a) {
  double w = 0;
  for (double x : a)
    for (double y : n) w += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  return 100.0 * w / double(n.size() * a.size());
}

ScoredClip sc(std::string machine, std::string domain, std::string cond, double s) {
  static int id = 0;
  return {"clip" + std::to_string(id++), std::move(machine), std::move(domain), std::move(cond), s};
}

CorpusSpec small_spec() {
  CorpusSpec s;
  s.machines = {"fan", "pump"};
  s.train_source = 4;
  s.train_target = 2;
  s.test_normal_per_domain = 2;
  s.test_anomalous_per_domain = 3;
  s.external_near = 4;
  s.external_unrelated = 5;
  return s;
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(auc({1, 2}, {1.5, 3}) == 75.0);
  CHECK(auc({4, 4, 4}, {4, 4}) == 50.0);
  CHECK(auc({0, 1}, {2, 3}) == 100.0);
  CHECK(auc({2, 3}, {0, 1}) == 0.0);
  CHECK_THROWS_AS(auc({}, {1}), InvalidArgument);
}

TEST_CASE("auc properties on random score sets") {
  Rng rng(8);
  std::uniform_int_distribution<int> len(1, 12), val(0, 6);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> n(len(rng)), a(len(rng));
    for (auto& x : n) x = val(rng);
    for (auto& x : a) x = val(rng);
    const double v = auc(n, a);
    CHECK(v == pair_count_auc(n, a));
    CHECK(v + auc(a, n) == doctest::Approx(100.0));
    // Strictly increasing transforms keep every comparison.
    auto f = [](double x) { return std::exp(0.7 * x) - 3.0; };
    std::vector<double> fn, fa;
    for (double x : n) fn.push_back(f(x));
    for (double x : a) fa.push_back(f(x));
    CHECK(auc(fn, fa) == v);
  }
}

TEST_CASE("evaluation per machine and domain") {
  std::vector<ScoredClip> s{
      sc("fan", "source", "normal", 0.1),    sc("fan", "source", "anomalous", 0.9),
      sc("fan", "target", "normal", 0.5),    sc("fan", "target", "anomalous", 0.4),
      sc("pump", "source", "normal", 1.0),   sc("pump", "source", "anomalous", 1.0),
      sc("valve", "source", "normal", 1.0),  // no anomalies: omitted
  };
  auto r = evaluate_scores(s);
  REQUIRE(r.machines.size() == 2);
  const auto& fan = r.machines[0];
  CHECK(fan.machine == "fan");
  CHECK(fan.auc_all == pair_count_auc({0.1, 0.5}, {0.9, 0.4}));
  CHECK(*fan.auc_source == 100.0);
  CHECK(*fan.auc_target == 0.0);
  CHECK(r.machines[1].auc_all == 50.0);
  CHECK_FALSE(r.machines[1].auc_target.has_value());
  CHECK_FALSE(r.warnings.empty());
  CHECK(r.mean_auc_all() == doctest::Approx((fan.auc_all + 50.0) / 2));
  auto tsv = scores_tsv(s);
  CHECK(tsv.rfind("clip_id\tmachine\tdomain\tcondition\tscore\n", 0) == 0);
  CHECK(tsv.find("\t0.100000\n") != std::string::npos);
}

TEST_CASE("manifest round trip and validation") {
  const auto dir = fs::temp_directory_path() / "asd_manifest_test";
  fs::create_directories(dir);
  ClipRecord a;
  a.clip_id = "a";
  a.path = "audio/a.wav";
  a.machine = "fan";
  a.attribute = "a1";
  ClipRecord b = a;
  b.clip_id = "b";
  b.split = "external";
  b.condition = "unknown";
  b.attribute.reset();
  b.external_class = {"/x/tone", "/x/other"};
  write_manifest((dir / "m.jsonl").string(), {a, b});
  auto back = read_manifest((dir / "m.jsonl").string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].to_json() == a.to_json());
  CHECK(back[1].to_json() == b.to_json());
  CHECK(resolve_path(dir.string(), a) == (dir / "audio/a.wav").string());

  CHECK_NOTHROW(validate_train_manifest({a}));
  ClipRecord bad = a;
  bad.condition = "anomalous";
  CHECK_THROWS_AS(validate_train_manifest({a, bad}), InvalidArgument);

  auto j = a.to_json();
  j["extra_field"] = 3;
  j.erase("clip_id");
  auto r = ClipRecord::from_json(j);
  CHECK(r.clip_id == "a");

  std::ofstream((dir / "bad.jsonl").string()) << "{\"path\": \"x.wav\", \"domain\": \"elsewhere\"}\n";
  CHECK_THROWS_AS(read_manifest((dir / "bad.jsonl").string()), InvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus counts and determinism") {
  const auto spec = small_spec();
  auto c1 = generate_synthetic_corpus(spec, 5, "", true);
  CHECK(c1.train.size() == 2 * (4 + 2));
  CHECK(c1.test.size() == 2 * 2 * (2 + 3));
  CHECK(c1.external.size() == 9);
  std::size_t near = 0;
  for (const auto& r : c1.external) near += c1.truth.at(r.clip_id).near_machine;
  CHECK(near == 4);
  CHECK_NOTHROW(validate_train_manifest(c1.train));

  auto c2 = generate_synthetic_corpus(spec, 5, "", true);
  for (const auto& [id, w] : c1.audio) CHECK(c2.audio.at(id).samples == w.samples);
  auto c3 = generate_synthetic_corpus(spec, 6, "", true);
  CHECK(c3.audio.at("fan_train_source_normal_0000").samples !=
        c1.audio.at("fan_train_source_normal_0000").samples);

  CorpusSpec one = spec;
  one.machines = {"fan"};
  CHECK_THROWS_AS(generate_synthetic_corpus(one, 0, ""), InvalidArgument);
}

TEST_CASE("written corpus files are byte-identical across runs") {
  auto spec = small_spec();
  spec.machines = {"fan", "pump"};
  spec.external_near = 1;
  spec.external_unrelated = 1;
  const auto d1 = fs::temp_directory_path() / "asd_corpus_a";
  const auto d2 = fs::temp_directory_path() / "asd_corpus_b";
  generate_synthetic_corpus(spec, 1, d1.string());
  generate_synthetic_corpus(spec, 1, d2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(d2 / fs::relative(e.path(), d1)));
  }
  CHECK(files == 3 + 12 + 20 + 2);
  auto train = read_manifest((d1 / "train.jsonl").string());
  auto w = features::read_wav(resolve_path(d1.string(), train[0]));
  CHECK(w.size() == 96000);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("anomalies detune the dominant partial") {
  auto spec = small_spec();
  auto c = generate_synthetic_corpus(spec, 2, "", true);
  for (const auto& r : c.test) {
    const auto& t = c.truth.at(r.clip_id);
    const auto mag = features::full_dft_magnitude(c.audio.at(r.clip_id));
    const double hz_per_bin = double(features::kSampleRate) / double(c.audio.at(r.clip_id).size());
    const double peak_hz = double(features::peak_bin(mag)) * hz_per_bin;
    INFO(r.clip_id);
    CHECK(std::abs(peak_hz - t.dominant_hz) <= 2 * hz_per_bin + 0.006 * t.dominant_hz);
    const double dev = std::abs(peak_hz - t.nominal_hz) / t.nominal_hz;
    if (r.condition == "normal") {
      CHECK(dev <= 0.006);
    } else {
      CHECK(dev >= spec.detune - 0.006);
    }
  }
}

TEST_CASE("corpus spec json") {
  auto s = CorpusSpec::from_json(nlohmann::json::parse(R"({"detune": 0.1, "attributes": 4})"));
  CHECK(s.detune == 0.1);
  CHECK(CorpusSpec::from_json(s.to_json()).to_json() == s.to_json());
  CHECK_THROWS_AS(CorpusSpec::from_json(nlohmann::json::parse(R"({"detun": 0.1})")), ConfigError);
  CHECK_THROWS_AS(CorpusSpec::from_json(nlohmann::json::parse(R"({"detune": 0.9})")), ConfigError);
}
