// include/asd/features/audio.hpp

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

#pragma once

#include <string>
#include <vector>

namespace asd::features {

inline constexpr int kSampleRate = 16000;

/// Mono audio at 16 kHz, nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

double l2_norm(const Waveform& w);

/// Reads a RIFF/WAVE file. Only PCM16, mono, 16 kHz is accepted; anything
/// else throws RuntimeError naming the offending field.
Waveform read_wav(const std::string& path);

/// Writes PCM16 mono; samples are clipped to [-1, 1).
void write_wav(const std::string& path, const Waveform& w);

}  // namespace asd::features
