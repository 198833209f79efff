// src/model/model.cpp

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

#include "asd/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace asd::model {

using ad::Shape;

namespace {

constexpr char kMagic[8] = {'A', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

std::string branch_prefix(std::size_t m) { return "b" + std::to_string(m); }

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double limit, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void normalize_rows(Tensor<T>& t) {
  const std::size_t rows = t.dim(0), d = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0;
    for (std::size_t i = 0; i < d; ++i) sq += double(t[r * d + i]) * t[r * d + i];
    const double inv = sq > 0 ? 1.0 / std::sqrt(sq) : 0.0;
    for (std::size_t i = 0; i < d; ++i) t[r * d + i] = static_cast<T>(t[r * d + i] * inv);
  }
}

double initial_scale(std::size_t classes, std::size_t sub) {
  const double n = static_cast<double>(classes * sub);
  return n > 2 ? std::max(1.0, std::sqrt(2.0) * std::log(n - 1.0)) : 1.0;
}

const features::Spectrogram& spec_of(const features::FeatureBundle& b, InputKind k) {
  return k == InputKind::SpecShort ? b.spec_short : b.spec_long;
}

}  // namespace

std::string to_string(InputKind k) {
  switch (k) {
    case InputKind::SpecShort: return "spec_short";
    case InputKind::SpecLong: return "spec_long";
    case InputKind::DftMag: return "dft_mag";
  }
  return "?";
}

InputKind input_kind_from_string(const std::string& s) {
  if (s == "spec_short") return InputKind::SpecShort;
  if (s == "spec_long") return InputKind::SpecLong;
  if (s == "dft_mag") return InputKind::DftMag;
  throw InvalidArgument("unknown input kind '" + s + "'");
}

std::size_t ModelArchitecture::concat_dim() const {
  std::size_t d = 0;
  for (const auto& b : branches) d += b.embed_dim;
  return d;
}

void ModelArchitecture::validate() const {
  if (sub_clusters == 0) throw InvalidArgument("architecture: sub_clusters must be positive");
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& b = branches[m];
    const std::string where = "architecture branch " + std::to_string(m) + ": ";
    if (b.channels.empty()) throw InvalidArgument(where + "needs at least one conv block");
    for (auto c : b.channels)
      if (c == 0) throw InvalidArgument(where + "zero channel count");
    if (b.kernel == 0 || b.stride == 0) throw InvalidArgument(where + "kernel and stride must be positive");
    if (b.in_w == 0 || b.in_h == 0) throw InvalidArgument(where + "empty input size");
    if (b.one_dimensional() && b.in_h != 1) throw InvalidArgument(where + "dft branch needs in_h = 1");
    if (b.embed_dim == 0) throw InvalidArgument(where + "embed_dim must be positive");
  }
}

nlohmann::json ModelArchitecture::to_json() const {
  nlohmann::json j;
  j["sub_clusters"] = sub_clusters;
  for (const auto& b : branches)
    j["branches"].push_back({{"kind", model::to_string(b.kind)},
                             {"in_h", b.in_h},
                             {"in_w", b.in_w},
                             {"channels", b.channels},
                             {"kernel", b.kernel},
                             {"stride", b.stride},
                             {"embed_dim", b.embed_dim}});
  return j;
}

ModelArchitecture ModelArchitecture::from_json(const nlohmann::json& j) {
  ModelArchitecture a;
  a.sub_clusters = j.at("sub_clusters").get<std::size_t>();
  const auto& bs = j.at("branches");
  if (!bs.is_array() || bs.size() != 3) throw InvalidArgument("architecture: expected 3 branches");
  for (std::size_t m = 0; m < 3; ++m) {
    auto& b = a.branches[m];
    b.kind = input_kind_from_string(bs[m].at("kind").get<std::string>());
    b.in_h = bs[m].at("in_h").get<std::size_t>();
    b.in_w = bs[m].at("in_w").get<std::size_t>();
    b.channels = bs[m].at("channels").get<std::vector<std::size_t>>();
    b.kernel = bs[m].at("kernel").get<std::size_t>();
    b.stride = bs[m].at("stride").get<std::size_t>();
    b.embed_dim = bs[m].at("embed_dim").get<std::size_t>();
  }
  a.validate();
  return a;
}

ModelArchitecture ModelArchitecture::standard() {
  ModelArchitecture a;
  a.branches[0] = {InputKind::SpecShort, 64, 64, {16, 32, 64}, 3, 2, 128};
  a.branches[1] = {InputKind::SpecLong, 128, 16, {16, 32, 64}, 3, 2, 128};
  a.branches[2] = {InputKind::DftMag, 1, 2048, {16, 32, 64}, 3, 2, 128};
  return a;
}

ModelArchitecture ModelArchitecture::compact() {
  ModelArchitecture a;
  a.branches[0] = {InputKind::SpecShort, 32, 32, {8, 16, 32}, 3, 2, 128};
  a.branches[1] = {InputKind::SpecLong, 64, 16, {8, 16, 32}, 3, 2, 128};
  a.branches[2] = {InputKind::DftMag, 1, 1024, {8, 16, 32}, 3, 2, 128};
  return a;
}

ModelArchitecture ModelArchitecture::tiny(std::size_t width, std::size_t embed_dim) {
  ModelArchitecture a;
  a.branches[0] = {InputKind::SpecShort, 6, 6, {width, width}, 3, 2, embed_dim};
  a.branches[1] = {InputKind::SpecLong, 6, 4, {width, width}, 3, 2, embed_dim};
  a.branches[2] = {InputKind::DftMag, 1, 12, {width, width}, 3, 2, embed_dim};
  return a;
}

std::vector<float> adaptive_pool_1d(std::span<const float> x, std::size_t m) {
  if (x.empty() || m == 0) throw InvalidArgument("adaptive_pool_1d: empty input or output");
  const std::size_t n = x.size();
  std::vector<float> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i * n / m;
    const std::size_t hi = ((i + 1) * n + m - 1) / m;
    double acc = 0;
    for (std::size_t k = lo; k < hi; ++k) acc += x[k];
    out[i] = static_cast<float>(acc / static_cast<double>(hi - lo));
  }
  return out;
}

std::vector<float> adaptive_pool_2d(std::span<const float> x, std::size_t rows,
                                    std::size_t cols, std::size_t out_rows,
                                    std::size_t out_cols) {
  if (x.size() != rows * cols) throw InvalidArgument("adaptive_pool_2d: size mismatch");
  // Columns first, then rows; separable means commute.
  std::vector<float> tmp(rows * out_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto pooled = adaptive_pool_1d(x.subspan(r * cols, cols), out_cols);
    std::copy(pooled.begin(), pooled.end(), tmp.begin() + static_cast<long>(r * out_cols));
  }
  std::vector<float> out(out_rows * out_cols);
  std::vector<float> column(rows);
  for (std::size_t c = 0; c < out_cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = tmp[r * out_cols + c];
    auto pooled = adaptive_pool_1d(column, out_rows);
    for (std::size_t r = 0; r < out_rows; ++r) out[r * out_cols + c] = pooled[r];
  }
  return out;
}

ModelInput pool_input(const features::FeatureBundle& b, const ModelArchitecture& arch) {
  ModelInput in;
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& br = arch.branches[m];
    if (br.one_dimensional()) {
      in.rep[m] = adaptive_pool_1d(b.dft_mag, br.in_w);
      continue;
    }
    // Spectrograms are stored frames x bins; the branch wants bins x frames.
    const auto& s = spec_of(b, br.kind);
    if (s.frames == 0 || s.bins == 0) throw InvalidArgument("pool_input: empty spectrogram");
    std::vector<float> transposed(s.frames * s.bins);
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t f = 0; f < s.bins; ++f) transposed[f * s.frames + t] = s.mag[t * s.bins + f];
    in.rep[m] = adaptive_pool_2d(transposed, s.bins, s.frames, br.in_h, br.in_w);
  }
  return in;
}

ModelInput mix_inputs(const ModelInput& a, const ModelInput& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("mix_inputs: lambda outside [0, 1]");
  ModelInput out;
  for (std::size_t m = 0; m < 3; ++m) {
    if (a.rep[m].size() != b.rep[m].size()) throw InvalidArgument("mix_inputs: size mismatch");
    out.rep[m].resize(a.rep[m].size());
    for (std::size_t i = 0; i < a.rep[m].size(); ++i)
      out.rep[m][i] = static_cast<float>(lambda * a.rep[m][i] + (1.0 - lambda) * b.rep[m][i]);
  }
  return out;
}

std::string head_name(std::size_t head) {
  return head == 0 ? "head.cat" : "head.b" + std::to_string(head - 1);
}

template <typename T>
ModelState<T> init_model(std::uint64_t seed, const std::vector<std::string>& class_names,
                         const ModelArchitecture& arch) {
  if (class_names.empty()) throw InvalidArgument("init_model: class_count must be at least 1");
  arch.validate();
  ModelState<T> s;
  s.arch = arch;
  s.class_names = class_names;
  s.seed = seed;
  auto stream = [seed](const std::string& name) { return derive_seed(seed, fnv1a(name)); };

  for (std::size_t m = 0; m < 3; ++m) {
    const auto& b = arch.branches[m];
    const std::string pre = branch_prefix(m);
    std::size_t in_ch = 1;
    for (std::size_t l = 0; l < b.channels.size(); ++l) {
      const std::size_t out_ch = b.channels[l];
      const std::string conv = pre + ".conv" + std::to_string(l) + ".w";
      const std::string bn = pre + ".bn" + std::to_string(l);
      Shape ws = b.one_dimensional() ? Shape{out_ch, in_ch, b.kernel}
                                     : Shape{out_ch, in_ch, b.kernel, b.kernel};
      const double fan_in = static_cast<double>(in_ch * b.kernel * (b.one_dimensional() ? 1 : b.kernel));
      s.params.add(conv, normal_tensor<T>(ws, std::sqrt(2.0 / fan_in), stream(conv)));
      s.params.add(bn + ".gamma", Tensor<T>(Shape{out_ch}, T(1)));
      s.params.add(bn + ".beta", Tensor<T>(Shape{out_ch}, T(0)));
      s.bn.emplace(bn, ad::BatchNormStats<T>(out_ch));
      in_ch = out_ch;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(in_ch + b.embed_dim));
    s.params.add(pre + ".fc.w", uniform_tensor<T>(Shape{b.embed_dim, in_ch}, limit, stream(pre + ".fc.w")));
    s.params.add(pre + ".fc.b", Tensor<T>(Shape{b.embed_dim}, T(0)));
  }

  const std::size_t rows = class_names.size() * arch.sub_clusters;
  for (std::size_t h = 0; h < 4; ++h) {
    const std::size_t dim = h == 0 ? arch.concat_dim() : arch.branches[h - 1].embed_dim;
    const std::string name = head_name(h) + ".centers";
    auto centers = normal_tensor<T>(Shape{rows, dim}, 1.0, stream(name));
    normalize_rows(centers);
    s.params.add(name, std::move(centers), /*trainable=*/h != 0);
    s.scales[h] = initial_scale(class_names.size(), arch.sub_clusters);
  }
  return s;
}

template <typename T>
ModelState<T> init_model(std::uint64_t seed, std::size_t class_count, const ModelArchitecture& arch) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < class_count; ++c) names.push_back("class" + std::to_string(c));
  return init_model<T>(seed, names, arch);
}

template <typename T>
Forward<T> forward(ModelState<T>& state, const std::vector<const ModelInput*>& inputs,
                   bool training) {
  if (inputs.empty()) throw InvalidArgument("forward: empty batch");
  const std::size_t n = inputs.size();
  Forward<T> out;
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& b = state.arch.branches[m];
    const std::size_t len = b.input_size();
    Tensor<T> x(b.one_dimensional() ? Shape{n, 1, b.in_w} : Shape{n, 1, b.in_h, b.in_w});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rep = inputs[i]->rep[m];
      if (rep.size() != len)
        throw InvalidArgument("forward: branch " + std::to_string(m) + " input has " +
                              std::to_string(rep.size()) + " values, architecture expects " +
                              std::to_string(len));
      for (std::size_t k = 0; k < len; ++k) {
        if (!(rep[k] >= 0.0f)) throw InvalidArgument("forward: magnitudes must be finite and non-negative");
        x[i * len + k] = static_cast<T>(std::log1p(static_cast<double>(rep[k])));
      }
    }
    Var<T> h = ad::constant(std::move(x));
    const std::string pre = branch_prefix(m);
    for (std::size_t l = 0; l < b.channels.size(); ++l) {
      const std::string bn = pre + ".bn" + std::to_string(l);
      const auto& w = state.params.get(pre + ".conv" + std::to_string(l) + ".w");
      h = b.one_dimensional() ? ad::conv1d(h, w, b.stride, b.kernel / 2)
                              : ad::conv2d(h, w, b.stride, b.kernel / 2);
      h = ad::batch_norm(h, state.params.get(bn + ".gamma"), state.params.get(bn + ".beta"),
                         state.bn.at(bn), training);
      h = ad::relu(h);
    }
    h = ad::global_avg_pool(h);
    h = ad::matmul_bt(h, state.params.get(pre + ".fc.w"));
    out.z[m] = ad::add_row_bias(h, state.params.get(pre + ".fc.b"));
  }
  out.zcat = ad::concat_cols<T>({out.z[0], out.z[1], out.z[2]});
  return out;
}

std::vector<EmbeddingBundle> embed_inputs(const std::vector<ModelInput>& inputs,
                                          const ModelState<float>& state, std::size_t chunk) {
  // Eval mode only reads the running statistics.
  auto& s = const_cast<ModelState<float>&>(state);
  std::vector<EmbeddingBundle> out(inputs.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    const std::size_t end = std::min(inputs.size(), start + chunk);
    std::vector<const ModelInput*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&inputs[i]);
    auto f = forward(s, batch, /*training=*/false);
    const std::size_t dcat = f.zcat.shape()[1];
    for (std::size_t i = start; i < end; ++i) {
      auto& e = out[i];
      const std::size_t r = i - start;
      for (std::size_t m = 0; m < 3; ++m) {
        const std::size_t d = f.z[m].shape()[1];
        const auto& v = f.z[m].value().data;
        e.z[m].assign(v.begin() + static_cast<long>(r * d), v.begin() + static_cast<long>((r + 1) * d));
      }
      const auto& v = f.zcat.value().data;
      e.zcat.assign(v.begin() + static_cast<long>(r * dcat), v.begin() + static_cast<long>((r + 1) * dcat));
    }
  }
  return out;
}

EmbeddingBundle embed(const features::FeatureBundle& bundle, const ModelState<float>& state) {
  return embed_inputs({pool_input(bundle, state.arch)}, state).front();
}

template <typename T>
void normalize_centers(ModelState<T>& state) {
  for (std::size_t h = 0; h < 4; ++h)
    if (state.params.trainable(head_name(h) + ".centers"))
      normalize_rows(state.centers(h).mutable_value());
}

template <typename T>
ModelState<T> cast_state(const ModelState<float>& s) {
  ModelState<T> out;
  out.arch = s.arch;
  out.scales = s.scales;
  out.class_names = s.class_names;
  out.seed = s.seed;
  out.stage = s.stage;
  for (const auto& [name, p] : s.params.params())
    out.params.add(name, ad::tensor_cast<T>(p.value()), s.params.trainable(name));
  for (const auto& [name, st] : s.bn) {
    ad::BatchNormStats<T> c;
    c.mean = ad::tensor_cast<T>(st.mean);
    c.var = ad::tensor_cast<T>(st.var);
    out.bn.emplace(name, std::move(c));
  }
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto& st = ckpt.state;
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (const auto& [name, p] : st.params.params()) tensors.emplace_back("param:" + name, &p.value());
  for (const auto& [name, b] : st.bn) {
    tensors.emplace_back("bn:" + name + ".mean", &b.mean);
    tensors.emplace_back("bn:" + name + ".var", &b.var);
  }
  for (const auto& [name, t] : ckpt.extra) tensors.emplace_back("extra:" + name, &t);

  nlohmann::json header;
  header["architecture"] = st.arch.to_json();
  header["class_names"] = st.class_names;
  header["seed"] = st.seed;
  header["stage"] = st.stage;
  header["scales"] = st.scales;
  header["metadata"] = ckpt.metadata;
  std::vector<std::string> frozen;
  for (const auto& [name, p] : st.params.params())
    if (!st.params.trainable(name)) frozen.push_back(name);
  header["frozen"] = frozen;
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    offset += t->size();
  }
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write checkpoint '" + path + "'");
  f.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kVersion;
  const std::uint64_t hlen = text.size();
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data.data()),
            static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!f) throw RuntimeError("short write to checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  f.read(magic, sizeof(magic));
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw RuntimeError("'" + path + "' is not an asdloop checkpoint");
  if (version != kVersion)
    throw RuntimeError("checkpoint '" + path + "' has format version " + std::to_string(version));
  std::string text(hlen, '\0');
  f.read(text.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(text);
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  auto& st = ck.state;
  st.arch = ModelArchitecture::from_json(header.at("architecture"));
  st.class_names = header.at("class_names").get<std::vector<std::string>>();
  st.seed = header.at("seed").get<std::uint64_t>();
  st.stage = header.at("stage").get<int>();
  st.scales = header.at("scales").get<std::array<double, 4>>();
  ck.metadata = header.at("metadata");
  const auto frozen = header.at("frozen").get<std::vector<std::string>>();

  std::map<std::string, ad::BatchNormStats<float>> bn;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = ad::shape_size(shape);
    if ((offset + n) * sizeof(float) > raw.size())
      throw RuntimeError("checkpoint '" + path + "' is truncated at tensor " + name);
    std::vector<float> values(n);
    std::memcpy(values.data(), raw.data() + offset * sizeof(float), n * sizeof(float));
    Tensor<float> t(shape, std::move(values));
    if (name.rfind("param:", 0) == 0) {
      const auto pname = name.substr(6);
      const bool trainable = std::find(frozen.begin(), frozen.end(), pname) == frozen.end();
      st.params.add(pname, std::move(t), trainable);
    } else if (name.rfind("bn:", 0) == 0) {
      const auto rest = name.substr(3);
      const auto dot = rest.rfind('.');
      auto& stats = st.bn[rest.substr(0, dot)];
      (rest.substr(dot + 1) == "mean" ? stats.mean : stats.var) = std::move(t);
    } else if (name.rfind("extra:", 0) == 0) {
      ck.extra.emplace(name.substr(6), std::move(t));
    }
  }
  return ck;
}

template ModelState<float> init_model<float>(std::uint64_t, const std::vector<std::string>&,
                                             const ModelArchitecture&);
template ModelState<double> init_model<double>(std::uint64_t, const std::vector<std::string>&,
                                               const ModelArchitecture&);
template ModelState<float> init_model<float>(std::uint64_t, std::size_t, const ModelArchitecture&);
template ModelState<double> init_model<double>(std::uint64_t, std::size_t, const ModelArchitecture&);
template Forward<float> forward<float>(ModelState<float>&, const std::vector<const ModelInput*>&, bool);
template Forward<double> forward<double>(ModelState<double>&, const std::vector<const ModelInput*>&, bool);
template void normalize_centers<float>(ModelState<float>&);
template void normalize_centers<double>(ModelState<double>&);
template ModelState<float> cast_state<float>(const ModelState<float>&);
template ModelState<double> cast_state<double>(const ModelState<float>&);

}  // namespace asd::model
