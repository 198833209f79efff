// src/evalio/evalio.cpp

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

#include "asd/evalio/evalio.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace asd::evalio {

namespace fs = std::filesystem;

nlohmann::json ClipRecord::to_json() const {
  nlohmann::json j{{"clip_id", clip_id}, {"path", path},   {"machine", machine},
                   {"domain", domain},   {"split", split}, {"condition", condition}};
  if (attribute) j["attribute"] = *attribute;
  if (!external_class.empty()) j["external_class"] = external_class;
  return j;
}

ClipRecord ClipRecord::from_json(const nlohmann::json& j) {
  ClipRecord r;
  auto str = [&](const char* key, std::string& dst) {
    if (j.contains(key) && !j[key].is_null()) dst = j[key].get<std::string>();
  };
  if (!j.is_object()) throw InvalidArgument("manifest line is not a JSON object");
  str("path", r.path);
  if (r.path.empty()) throw InvalidArgument("manifest record without a path");
  r.clip_id = fs::path(r.path).stem().string();
  str("clip_id", r.clip_id);
  str("machine", r.machine);
  str("domain", r.domain);
  str("split", r.split);
  str("condition", r.condition);
  if (j.contains("attribute") && !j["attribute"].is_null()) r.attribute = j["attribute"].get<std::string>();
  if (j.contains("external_class")) {
    const auto& e = j["external_class"];
    if (e.is_string()) r.external_class.push_back(e.get<std::string>());
    else if (e.is_array()) r.external_class = e.get<std::vector<std::string>>();
  }
  if (r.domain != "source" && r.domain != "target")
    throw InvalidArgument("clip '" + r.clip_id + "': domain must be source or target");
  if (r.condition != "normal" && r.condition != "anomalous" && r.condition != "unknown")
    throw InvalidArgument("clip '" + r.clip_id + "': bad condition '" + r.condition + "'");
  return r;
}

std::vector<ClipRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open manifest '" + path + "'");
  std::vector<ClipRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(ClipRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ClipRecord>& records) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write manifest '" + path + "'");
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  if (!out) throw RuntimeError("short write to '" + path + "'");
}

std::string resolve_path(const std::string& manifest_dir, const ClipRecord& r) {
  fs::path p(r.path);
  return p.is_absolute() ? p.string() : (fs::path(manifest_dir) / p).string();
}

void validate_train_manifest(const std::vector<ClipRecord>& records) {
  for (const auto& r : records) {
    if (r.split != "train")
      throw InvalidArgument("training manifest: clip '" + r.clip_id + "' has split '" + r.split + "'");
    if (r.condition != "normal")
      throw InvalidArgument("training manifest: clip '" + r.clip_id + "' is not normal");
    if (r.machine.empty()) throw InvalidArgument("training manifest: clip '" + r.clip_id + "' has no machine");
  }
}

double auc(const std::vector<double>& normal, const std::vector<double>& anomalous) {
  if (normal.empty() || anomalous.empty()) throw InvalidArgument("auc: both score lists must be nonempty");
  std::vector<double> sorted = normal;
  std::sort(sorted.begin(), sorted.end());
  double wins = 0;
  for (double a : anomalous) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), a);
    const auto hi = std::upper_bound(lo, sorted.end(), a);
    wins += static_cast<double>(lo - sorted.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return 100.0 * wins / (static_cast<double>(normal.size()) * static_cast<double>(anomalous.size()));
}

double EvalReport::mean_auc_all() const {
  if (machines.empty()) return 0;
  double s = 0;
  for (const auto& m : machines) s += m.auc_all;
  return s / static_cast<double>(machines.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["machines"] = nlohmann::json::array();
  for (const auto& m : machines) {
    nlohmann::json row{{"machine", m.machine}, {"auc_all", m.auc_all},
                       {"n_normal", m.n_normal}, {"n_anomalous", m.n_anomalous}};
    row["auc_source"] = m.auc_source ? nlohmann::json(*m.auc_source) : nlohmann::json();
    row["auc_target"] = m.auc_target ? nlohmann::json(*m.auc_target) : nlohmann::json();
    j["machines"].push_back(row);
  }
  j["mean_auc_all"] = mean_auc_all();
  j["warnings"] = warnings;
  return j;
}

EvalReport evaluate_scores(const std::vector<ScoredClip>& scores) {
  EvalReport rep;
  rep.scores = scores;
  std::map<std::string, std::vector<const ScoredClip*>> by_machine;
  for (const auto& s : scores) by_machine[s.machine].push_back(&s);
  for (const auto& [machine, clips] : by_machine) {
    std::vector<double> n_all, a_all;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> dom;
    for (const auto* c : clips) {
      if (c->condition == "normal") {
        n_all.push_back(c->score);
        dom[c->domain].first.push_back(c->score);
      } else if (c->condition == "anomalous") {
        a_all.push_back(c->score);
        dom[c->domain].second.push_back(c->score);
      }
    }
    if (n_all.empty() || a_all.empty()) {
      rep.warnings.push_back("machine '" + machine + "' lacks normal or anomalous test clips; omitted");
      continue;
    }
    MachineReport m;
    m.machine = machine;
    m.auc_all = auc(n_all, a_all);
    m.n_normal = n_all.size();
    m.n_anomalous = a_all.size();
    for (const char* d : {"source", "target"}) {
      auto it = dom.find(d);
      std::optional<double> v;
      if (it != dom.end() && !it->second.first.empty() && !it->second.second.empty())
        v = auc(it->second.first, it->second.second);
      else
        rep.warnings.push_back("machine '" + machine + "' has no " + d + " AUC");
      (std::string(d) == "source" ? m.auc_source : m.auc_target) = v;
    }
    rep.machines.push_back(m);
  }
  return rep;
}

std::string scores_tsv(const std::vector<ScoredClip>& scores) {
  std::ostringstream os;
  os << "clip_id\tmachine\tdomain\tcondition\tscore\n";
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof(buf), "%.6f", s.score);
    os << s.clip_id << '\t' << s.machine << '\t' << s.domain << '\t' << s.condition << '\t' << buf << '\n';
  }
  return os.str();
}

}  // namespace asd::evalio
