// include/asd/features/spectral.hpp

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

// Magnitude representations of a clip: two STFTs (8 ms and 256 ms windows,
// 50 % hop) and the DFT magnitude of the whole signal.

#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "asd/features/audio.hpp"

namespace asd::features {

/// Real-input FFT of a fixed size. Owns its plan and aligned buffers; one
/// instance must not be shared between threads.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// `in` has size() samples; `out` gets bins() coefficients.
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  /// Unnormalized inverse: forward followed by inverse scales by size().
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  struct Impl;
  std::size_t n_;
  std::unique_ptr<Impl> impl_;
};

enum class WindowFunction { Hann, Rectangular };

struct StftConfig {
  double window_ms = 256.0;
  double hop_fraction = 0.5;
  WindowFunction window = WindowFunction::Hann;

  std::size_t window_length() const;
  std::size_t hop_length() const;
};

inline StftConfig short_stft() { return StftConfig{8.0, 0.5, WindowFunction::Hann}; }
inline StftConfig long_stft() { return StftConfig{256.0, 0.5, WindowFunction::Hann}; }

/// frames x bins magnitudes, row-major by frame.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> mag;

  float at(std::size_t t, std::size_t f) const { return mag[t * bins + f]; }
};

struct FeatureBundle {
  Spectrogram spec_short;
  Spectrogram spec_long;
  std::vector<float> dft_mag;
};

/// Periodic window of length n.
std::vector<double> make_window(WindowFunction fn, std::size_t n);

/// floor((L - W) / H) + 1 frames of W/2 + 1 bins, no padding. Throws
/// InvalidArgument when the signal is shorter than the window.
Spectrogram stft_magnitude(const Waveform& w, const StftConfig& cfg);

/// |DFT| of the whole signal, floor(L/2) + 1 bins.
std::vector<float> full_dft_magnitude(const Waveform& w);

FeatureBundle extract_features(const Waveform& w);

/// Index of the largest magnitude (first one on ties).
std::size_t peak_bin(std::span<const float> mag);

}  // namespace asd::features
