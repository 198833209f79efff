// include/asd/model/model.hpp

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

// Three-branch embedding network. Each branch sees one pooled, log-compressed
// representation of a clip and maps it to a 128-dim embedding; the three are
// concatenated into z_cat.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/autodiff/optim.hpp"
#include "asd/features/spectral.hpp"

namespace asd::model {

using ad::Tensor;
using ad::Var;

enum class InputKind { SpecShort, SpecLong, DftMag };

std::string to_string(InputKind k);
InputKind input_kind_from_string(const std::string& s);

struct BranchArchitecture {
  InputKind kind = InputKind::SpecShort;
  // Pooled input size: spectrograms become in_h (frequency) x in_w (time);
  // the 1-D DFT branch uses in_w only.
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t embed_dim = 128;

  bool one_dimensional() const { return kind == InputKind::DftMag; }
  std::size_t input_size() const { return in_h * in_w; }
};

struct ModelArchitecture {
  std::array<BranchArchitecture, 3> branches;
  std::size_t sub_clusters = 16;

  std::size_t concat_dim() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelArchitecture from_json(const nlohmann::json& j);

  /// 16/32/64 channels per branch.
  static ModelArchitecture standard();
  /// 8/16/32 channels on smaller pooled inputs; the desk-scale default.
  static ModelArchitecture compact();
  /// Narrow network for gradient checks: `width` channels, two blocks, tiny
  /// inputs, embed_dim kept at 128 unless overridden.
  static ModelArchitecture tiny(std::size_t width, std::size_t embed_dim = 128);
};

/// Pooled magnitudes of one clip, one vector per branch, in branch order.
/// Mixing happens on these (before log compression).
struct ModelInput {
  std::array<std::vector<float>, 3> rep;
};

/// Mean-pools each representation to the architecture's input size.
ModelInput pool_input(const features::FeatureBundle& b, const ModelArchitecture& arch);

/// lambda a + (1 - lambda) b, elementwise per representation.
ModelInput mix_inputs(const ModelInput& a, const ModelInput& b, double lambda);

/// Adaptive average pooling of n values into m cells: cell i covers
/// [floor(i n / m), ceil((i + 1) n / m)).
std::vector<float> adaptive_pool_1d(std::span<const float> x, std::size_t m);
/// Same on a rows x cols matrix (row-major) to out_rows x out_cols.
std::vector<float> adaptive_pool_2d(std::span<const float> x, std::size_t rows,
                                    std::size_t cols, std::size_t out_rows,
                                    std::size_t out_cols);

struct EmbeddingBundle {
  std::array<std::vector<float>, 3> z;
  std::vector<float> zcat;
};

/// Parameter names of the four loss heads; index 0 is the concatenated head.
std::string head_name(std::size_t head);

template <typename T>
struct ModelState {
  ModelArchitecture arch;
  ad::ParamStore<T> params;
  std::map<std::string, ad::BatchNormStats<T>> bn;
  std::array<double, 4> scales{};  // AdaCos scale per head
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  int stage = 1;

  std::size_t class_count() const { return class_names.size(); }
  /// Copies share parameter nodes with the original; this does not.
  ModelState clone() const {
    ModelState out{arch, params.clone(), bn, scales, class_names, seed, stage};
    return out;
  }
  /// [C*S, D] centers of head h (rows grouped by class).
  Var<T>& centers(std::size_t head) { return params.get(head_name(head) + ".centers"); }
  const Var<T>& centers(std::size_t head) const {
    return params.get(head_name(head) + ".centers");
  }
};

/// Fresh model. Every parameter is drawn from its own stream derived from
/// (seed, parameter name), so the same seed always yields the same weights.
/// Centers are unit-norm; the concatenated head is frozen.
template <typename T>
ModelState<T> init_model(std::uint64_t seed, const std::vector<std::string>& class_names,
                         const ModelArchitecture& arch);
template <typename T>
ModelState<T> init_model(std::uint64_t seed, std::size_t class_count,
                         const ModelArchitecture& arch);

template <typename T>
struct Forward {
  std::array<Var<T>, 3> z;  // [N, 128] each
  Var<T> zcat;              // [N, 384]
};

/// Batched forward pass. Inputs are log1p-compressed here. In training mode
/// batch-norm uses batch statistics and updates the running ones.
template <typename T>
Forward<T> forward(ModelState<T>& state, const std::vector<const ModelInput*>& inputs,
                   bool training);

/// Eval-mode embeddings of many inputs, processed in chunks.
std::vector<EmbeddingBundle> embed_inputs(const std::vector<ModelInput>& inputs,
                                          const ModelState<float>& state,
                                          std::size_t chunk = 64);

/// Eval-mode embedding of one clip's features.
EmbeddingBundle embed(const features::FeatureBundle& bundle, const ModelState<float>& state);

/// Re-projects the center rows of every trainable head onto the unit sphere.
template <typename T>
void normalize_centers(ModelState<T>& state);

template <typename T>
ModelState<T> cast_state(const ModelState<float>& s);

// Checkpoint: "ASDCKPT" magic, format version, a JSON header (architecture,
// classes, seed, stage, scales, tensor directory, caller metadata), then raw
// little-endian float32 tensors. Callers may attach extra named tensors.
struct Checkpoint {
  ModelState<float> state;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor<float>> extra;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace asd::model
