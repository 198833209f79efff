// src/evalio/synthetic.cpp

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

// Synthetic machine sounds. A machine is a harmonic stack with one dominant
// partial; hidden attributes move f0 and the amplitude-modulation rate; the
// target domain changes background noise colour and level; anomalies detune
// the dominant partial and may add clicks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "asd/evalio/evalio.hpp"

namespace asd::evalio {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSignalRms = 0.1;
constexpr double kNoiseRms = 0.01;

struct MachineVoice {
  double f0 = 100;
  std::vector<double> amps;  // partial h+1 has amplitude amps[h]
  std::size_t dominant = 0;  // index into amps
};

MachineVoice make_voice(std::size_t index, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, fnv1a("voice:" + name)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MachineVoice v;
  v.f0 = 90.0 * std::pow(1.37, static_cast<double>(index)) * (0.97 + 0.06 * u(rng));
  const auto partials = std::min<std::size_t>(16, static_cast<std::size_t>(3500.0 / v.f0));
  v.dominant = 1 + static_cast<std::size_t>(u(rng) * 3.0);  // 2nd..4th harmonic
  for (std::size_t h = 0; h < partials; ++h)
    v.amps.push_back((0.15 + 0.45 * u(rng)) / std::sqrt(static_cast<double>(h + 1)));
  v.amps[v.dominant] = 1.0;
  return v;
}

void scale_to_rms(std::vector<double>& x, double rms) {
  double acc = 0;
  for (double v : x) acc += v * v;
  const double cur = std::sqrt(acc / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
  if (cur > 0)
    for (double& v : x) v *= rms / cur;
}

// One-pole filtered white noise; coef > 0 tilts low, coef < 0 tilts high.
std::vector<double> colored_noise(std::size_t n, double coef, double rms, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  double y = 0;
  for (auto& v : x) {
    y = coef * y + g(rng);
    v = y;
  }
  scale_to_rms(x, rms);
  return x;
}

struct VoiceSettings {
  double f0_factor = 1.0;
  double am_rate = 2.0;
  double dominant_factor = 1.0;  // extra factor on the dominant partial
};

std::vector<double> render_voice(const MachineVoice& v, const VoiceSettings& s, std::size_t n,
                                 Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f0 = v.f0 * s.f0_factor * (0.995 + 0.01 * u(rng));
  const double am_phase = kTwoPi * u(rng);
  std::vector<double> x(n, 0.0);
  for (std::size_t h = 0; h < v.amps.size(); ++h) {
    double f = f0 * static_cast<double>(h + 1);
    if (h == v.dominant) f *= s.dominant_factor;
    if (f >= 0.45 * features::kSampleRate) continue;
    const double amp = v.amps[h] * (0.9 + 0.2 * u(rng));
    const double ph = kTwoPi * u(rng);
    const double w = kTwoPi * f / features::kSampleRate;
    for (std::size_t i = 0; i < n; ++i) x[i] += amp * std::sin(w * static_cast<double>(i) + ph);
  }
  const double wa = kTwoPi * s.am_rate / features::kSampleRate;
  for (std::size_t i = 0; i < n; ++i) x[i] *= 1.0 + 0.25 * std::sin(wa * static_cast<double>(i) + am_phase);
  scale_to_rms(x, kSignalRms);
  return x;
}

void add_clicks(std::vector<double>& x, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const int clicks = 3 + static_cast<int>(u(rng) * 4);
  const auto len = static_cast<std::size_t>(0.02 * features::kSampleRate);
  for (int c = 0; c < clicks; ++c) {
    const auto start = static_cast<std::size_t>(u(rng) * static_cast<double>(x.size() - len));
    for (std::size_t i = 0; i < len; ++i)
      x[start + i] += 0.3 * g(rng) * std::exp(-static_cast<double>(i) / (0.2 * static_cast<double>(len)));
  }
}

std::vector<double> render_unrelated(std::size_t kind, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  const double sr = features::kSampleRate;
  switch (kind) {
    case 0: {  // a few unrelated steady tones
      const int tones = 1 + static_cast<int>(u(rng) * 3);
      for (int t = 0; t < tones; ++t) {
        const double w = kTwoPi * (300.0 + 5700.0 * u(rng)) / sr;
        const double ph = kTwoPi * u(rng);
        for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(w * static_cast<double>(i) + ph);
      }
      break;
    }
    case 1:  // coloured noise
      x = colored_noise(n, -0.9 + 1.8 * u(rng), 1.0, rng);
      break;
    case 2: {  // linear chirp
      const double f_lo = 200 + 800 * u(rng), f_hi = 2000 + 4000 * u(rng);
      double phase = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double f = f_lo + (f_hi - f_lo) * static_cast<double>(i) / static_cast<double>(n);
        phase += kTwoPi * f / sr;
        x[i] = std::sin(phase);
      }
      break;
    }
    case 3: {  // pulse train
      const auto period = static_cast<std::size_t>(sr / (5.0 + 25.0 * u(rng)));
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i % period);
        x[i] = std::exp(-t / 40.0) * std::sin(kTwoPi * 1500.0 * t / sr);
      }
      break;
    }
    default: {  // inharmonic bell-like partials
      const double base = 400 + 600 * u(rng);
      for (double ratio : {1.0, 2.76, 5.4, 8.93}) {
        const double w = kTwoPi * base * ratio / sr;
        const double decay = 0.5 + 1.5 * u(rng);
        for (std::size_t i = 0; i < n; ++i)
          x[i] += std::exp(-static_cast<double>(i) / (decay * sr)) * std::sin(w * static_cast<double>(i));
      }
      break;
    }
  }
  scale_to_rms(x, kSignalRms);
  return x;
}

const char* kUnrelatedClasses[] = {"/x/tone", "/x/noise", "/x/chirp", "/x/pulse", "/x/bell"};
constexpr const char* kNearClass = "/x/motor";

features::Waveform to_waveform(const std::vector<double>& x) {
  features::Waveform w;
  w.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    w.samples[i] = static_cast<float>(std::clamp(x[i], -1.0, 1.0));
  return w;
}

std::string pad(std::size_t i, int width = 4) {
  std::string s = std::to_string(i);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

void CorpusSpec::validate() const {
  if (machines.size() < 2) throw InvalidArgument("corpus: at least 2 machines are needed for triplets");
  std::set<std::string> seen(machines.begin(), machines.end());
  if (seen.size() != machines.size()) throw InvalidArgument("corpus: duplicate machine names");
  for (const auto& m : machines)
    if (m.empty() || m.find_first_of("/\\ \t") != std::string::npos)
      throw InvalidArgument("corpus: bad machine name '" + m + "'");
  if (attributes < 2) throw InvalidArgument("corpus: at least 2 attributes per machine");
  if (!(clip_seconds >= 6.0 && clip_seconds <= 18.0))
    throw InvalidArgument("corpus: clip_seconds must lie in [6, 18]");
  if (train_source == 0 || train_target == 0) throw InvalidArgument("corpus: empty training domain");
  if (test_normal_per_domain == 0 || test_anomalous_per_domain == 0)
    throw InvalidArgument("corpus: empty test domain");
  if (!(detune > 0 && detune < 0.5)) throw InvalidArgument("corpus: detune must be in (0, 0.5)");
  if (!(transient_prob >= 0 && transient_prob <= 1)) throw InvalidArgument("corpus: transient_prob outside [0, 1]");
  if (!(attribute_spread >= 0 && attribute_spread < 0.3)) throw InvalidArgument("corpus: attribute_spread outside [0, 0.3)");
  if (!(target_noise_gain > 0)) throw InvalidArgument("corpus: target_noise_gain must be positive");
  if (!(near_f0_shift >= 0 && near_f0_shift < 0.5)) throw InvalidArgument("corpus: near_f0_shift outside [0, 0.5)");
}

nlohmann::json CorpusSpec::to_json() const {
  return {{"machines", machines},
          {"attributes", attributes},
          {"clip_seconds", clip_seconds},
          {"train_source", train_source},
          {"train_target", train_target},
          {"test_normal_per_domain", test_normal_per_domain},
          {"test_anomalous_per_domain", test_anomalous_per_domain},
          {"external_near", external_near},
          {"external_unrelated", external_unrelated},
          {"detune", detune},
          {"transient_prob", transient_prob},
          {"attribute_spread", attribute_spread},
          {"target_noise_gain", target_noise_gain},
          {"near_f0_shift", near_f0_shift}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("corpus spec must be a JSON object");
  CorpusSpec s;
  const auto known = s.to_json();
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("corpus spec: unknown key '" + k + "'");
  try {
    if (j.contains("machines")) s.machines = j["machines"].get<std::vector<std::string>>();
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
    };
    get("attributes", s.attributes);
    get("clip_seconds", s.clip_seconds);
    get("train_source", s.train_source);
    get("train_target", s.train_target);
    get("test_normal_per_domain", s.test_normal_per_domain);
    get("test_anomalous_per_domain", s.test_anomalous_per_domain);
    get("external_near", s.external_near);
    get("external_unrelated", s.external_unrelated);
    get("detune", s.detune);
    get("transient_prob", s.transient_prob);
    get("attribute_spread", s.attribute_spread);
    get("target_noise_gain", s.target_noise_gain);
    get("near_f0_shift", s.near_f0_shift);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus spec: ") + e.what());
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

Corpus generate_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir, bool keep_audio) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_seconds * features::kSampleRate));
  Corpus corpus;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  auto emit = [&](ClipRecord rec, const std::vector<double>& x, ClipTruth truth) {
    auto w = to_waveform(x);
    if (!out_dir.empty()) {
      const fs::path rel = fs::path("audio") / rec.split / (rec.clip_id + ".wav");
      fs::create_directories(fs::path(out_dir) / rel.parent_path());
      features::write_wav((fs::path(out_dir) / rel).string(), w);
      rec.path = rel.string();
    } else {
      rec.path = "memory:" + rec.clip_id;
    }
    corpus.truth[rec.clip_id] = truth;
    if (keep_audio) corpus.audio[rec.clip_id] = std::move(w);
    auto& dst = rec.split == "train" ? corpus.train : rec.split == "test" ? corpus.test : corpus.external;
    dst.push_back(std::move(rec));
  };

  std::vector<MachineVoice> voices;
  for (std::size_t m = 0; m < spec.machines.size(); ++m)
    voices.push_back(make_voice(m, seed, spec.machines[m]));

  auto attr_settings = [&](std::size_t a) {
    VoiceSettings s;
    s.f0_factor = 1.0 + spec.attribute_spread *
                            (static_cast<double>(a) - 0.5 * static_cast<double>(spec.attributes - 1));
    s.am_rate = 1.5 + 2.5 * static_cast<double>(a);
    return s;
  };

  auto machine_clip = [&](std::size_t m, const std::string& split, const std::string& domain,
                          bool anomalous, std::size_t idx) {
    const auto& name = spec.machines[m];
    ClipRecord rec;
    rec.clip_id = name + "_" + split + "_" + domain + "_" + (anomalous ? "anomaly_" : "normal_") + pad(idx);
    rec.machine = name;
    rec.domain = domain;
    rec.split = split;
    rec.condition = anomalous ? "anomalous" : "normal";
    Rng rng(derive_seed(seed, fnv1a(rec.clip_id)));
    const std::size_t attr = idx % spec.attributes;
    rec.attribute = "a" + std::to_string(attr);
    auto s = attr_settings(attr);
    ClipTruth truth;
    truth.nominal_hz = voices[m].f0 * s.f0_factor * static_cast<double>(voices[m].dominant + 1);
    bool clicks = false;
    if (anomalous) {
      s.dominant_factor = std::bernoulli_distribution(0.5)(rng) ? 1.0 + spec.detune : 1.0 - spec.detune;
      clicks = std::bernoulli_distribution(spec.transient_prob)(rng);
    }
    truth.dominant_hz = truth.nominal_hz * s.dominant_factor;
    auto x = render_voice(voices[m], s, n, rng);
    const bool target = domain == "target";
    const auto noise = colored_noise(n, target ? -0.6 : 0.9,
                                     kNoiseRms * (target ? spec.target_noise_gain : 1.0), rng);
    for (std::size_t i = 0; i < n; ++i) x[i] += noise[i];
    if (clicks) add_clicks(x, rng);
    emit(std::move(rec), x, truth);
  };

  for (std::size_t m = 0; m < spec.machines.size(); ++m) {
    for (std::size_t i = 0; i < spec.train_source; ++i) machine_clip(m, "train", "source", false, i);
    for (std::size_t i = 0; i < spec.train_target; ++i) machine_clip(m, "train", "target", false, i);
    for (const char* d : {"source", "target"}) {
      for (std::size_t i = 0; i < spec.test_normal_per_domain; ++i) machine_clip(m, "test", d, false, i);
      for (std::size_t i = 0; i < spec.test_anomalous_per_domain; ++i) machine_clip(m, "test", d, true, i);
    }
  }

  // External pool: near-machine clips first, then unrelated ones, then a
  // seeded shuffle so ids carry no hint of the kind.
  const std::size_t total = spec.external_near + spec.external_unrelated;
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(seed, fnv1a("external-order")));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  for (std::size_t slot = 0; slot < total; ++slot) {
    const std::size_t kind = order[slot];
    ClipRecord rec;
    rec.clip_id = "ext_" + pad(slot, 5);
    rec.split = "external";
    rec.condition = "unknown";
    Rng rng(derive_seed(seed, fnv1a(rec.clip_id)));
    ClipTruth truth;
    std::vector<double> x;
    if (kind < spec.external_near) {
      const std::size_t m = kind % spec.machines.size();
      auto s = attr_settings(kind / spec.machines.size() % spec.attributes);
      s.f0_factor *= std::bernoulli_distribution(0.5)(rng) ? 1.0 + spec.near_f0_shift : 1.0 - spec.near_f0_shift;
      x = render_voice(voices[m], s, n, rng);
      const auto noise = colored_noise(n, 0.9, kNoiseRms, rng);
      for (std::size_t i = 0; i < n; ++i) x[i] += noise[i];
      rec.external_class = {kNearClass};
      truth.near_machine = true;
      truth.near_to = spec.machines[m];
      truth.nominal_hz = truth.dominant_hz = voices[m].f0 * s.f0_factor * static_cast<double>(voices[m].dominant + 1);
    } else {
      const std::size_t type = (kind - spec.external_near) % 5;
      x = render_unrelated(type, n, rng);
      rec.external_class = {kUnrelatedClasses[type]};
    }
    emit(std::move(rec), x, truth);
  }

  if (!out_dir.empty()) {
    write_manifest((fs::path(out_dir) / "train.jsonl").string(), corpus.train);
    write_manifest((fs::path(out_dir) / "test.jsonl").string(), corpus.test);
    write_manifest((fs::path(out_dir) / "external.jsonl").string(), corpus.external);
  }
  return corpus;
}

}  // namespace asd::evalio
