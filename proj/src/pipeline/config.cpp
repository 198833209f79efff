// src/pipeline/config.cpp

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

#include <set>

#include "asd/pipeline/pipeline.hpp"

namespace asd::pipeline {

std::string to_string(LabelSource s) {
  return s == LabelSource::MachineOnly ? "machine" : "machine+attribute";
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "machine") return LabelSource::MachineOnly;
  if (s == "machine+attribute") return LabelSource::MachineAttribute;
  throw ConfigError("label_source must be 'machine' or 'machine+attribute', got '" + s + "'");
}

void StageConfig::validate() const {
  auto bad = [](const std::string& why) { throw ConfigError("config: " + why); };
  if (stage < 1) bad("stage must be at least 1");
  if (batch_size < 2) bad("batch_size must be at least 2");
  if (!(lr > 0)) bad("lr must be positive");
  if (!(weight_decay >= 0)) bad("weight_decay must be non-negative");
  if (!(mixup_prob >= 0 && mixup_prob <= 1)) bad("mixup_prob must lie in [0, 1]");
  if (n_max == 0) bad("n_max must be at least 1");
  if (k_so == 0 || k_ta == 0 || pseudo_k_so == 0 || pseudo_k_ta == 0) bad("cluster counts must be positive");
  if (use_triplet && variants == 0) bad("variants must be positive when triplets are on");
  try {
    triplet.validate();
    arch.validate();
  } catch (const InvalidArgument& e) {
    bad(e.what());
  }
}

nlohmann::json StageConfig::to_json() const {
  return {{"stage", stage},
          {"use_triplet", use_triplet},
          {"use_pseudo", use_pseudo},
          {"use_external", use_external},
          {"random_selection", random_selection},
          {"label_source", to_string(label_source)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"mixup_prob", mixup_prob},
          {"seed", seed},
          {"n_max", n_max},
          {"k_so", k_so},
          {"k_ta", k_ta},
          {"pseudo_k_so", pseudo_k_so},
          {"pseudo_k_ta", pseudo_k_ta},
          {"variants", variants},
          {"adacos_dynamic", adacos_dynamic},
          {"triplet",
           {{"alpha_db_min", triplet.alpha_db_min},
            {"alpha_db_max", triplet.alpha_db_max},
            {"beta_min", triplet.beta_min},
            {"beta_max", triplet.beta_max},
            {"tau", triplet.tau},
            {"gamma", triplet.gamma}}},
          {"architecture", arch.to_json()}};
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  StageConfig c;
  const auto known = c.to_json();
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
  try {
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
    };
    get("stage", c.stage);
    get("use_triplet", c.use_triplet);
    get("use_pseudo", c.use_pseudo);
    get("use_external", c.use_external);
    get("random_selection", c.random_selection);
    if (j.contains("label_source")) c.label_source = label_source_from_string(j["label_source"].get<std::string>());
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("mixup_prob", c.mixup_prob);
    get("seed", c.seed);
    get("n_max", c.n_max);
    get("k_so", c.k_so);
    get("k_ta", c.k_ta);
    get("pseudo_k_so", c.pseudo_k_so);
    get("pseudo_k_ta", c.pseudo_k_ta);
    get("variants", c.variants);
    get("adacos_dynamic", c.adacos_dynamic);
    if (j.contains("triplet")) {
      const auto& t = j["triplet"];
      const auto tk = known["triplet"];
      for (const auto& [k, v] : t.items())
        if (!tk.contains(k)) throw ConfigError("config: unknown key 'triplet." + k + "'");
      auto tget = [&](const char* key, double& dst) {
        if (t.contains(key)) dst = t[key].get<double>();
      };
      tget("alpha_db_min", c.triplet.alpha_db_min);
      tget("alpha_db_max", c.triplet.alpha_db_max);
      tget("beta_min", c.triplet.beta_min);
      tget("beta_max", c.triplet.beta_max);
      tget("tau", c.triplet.tau);
      tget("gamma", c.triplet.gamma);
    }
    if (j.contains("architecture")) {
      const auto& a = j["architecture"];
      if (a.is_string()) {
        const auto name = a.get<std::string>();
        if (name == "compact") c.arch = model::ModelArchitecture::compact();
        else if (name == "standard") c.arch = model::ModelArchitecture::standard();
        else throw ConfigError("config: architecture preset must be 'compact' or 'standard'");
      } else {
        c.arch = model::ModelArchitecture::from_json(a);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace asd::pipeline
