// include/asd/features/augment.hpp

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

// Waveform augmentations used to build triplets and mixed training samples.

#pragma once

#include <utility>
#include <vector>

#include "asd/common.hpp"
#include "asd/features/audio.hpp"

namespace asd::features {

struct TripletConfig {
  double alpha_db_min = -5.0;
  double alpha_db_max = 20.0;
  double beta_min = 6.0;  // semitone magnitudes; the sign is drawn separately
  double beta_max = 12.0;
  double tau = 0.2;
  double gamma = 0.5;

  /// Throws InvalidArgument when a field is out of its domain.
  void validate() const;
  double sample_alpha(Rng& rng) const;
  double sample_beta(Rng& rng) const;
};

/// Gain applied to the noise clip: 10^(-alpha/20) * ||anchor|| / ||noise||.
/// Zero-norm noise throws InvalidArgument.
double snr_noise_gain(double anchor_norm, double noise_norm, double alpha_db);

/// anchor + gain * noise, where the noise is tiled and cropped to the
/// anchor's length first. A silent anchor is returned unchanged.
Waveform snr_mix(const Waveform& anchor, const Waveform& noise, double alpha_db);

/// Band-limited resampling by windowed sinc: output sample i sits at input
/// position i * step. Cut-off is min(1, 1/step) of Nyquist.
std::vector<float> resample_sinc(const std::vector<float>& x, double step,
                                 std::size_t out_len);

/// Phase-vocoder time stretch (n_fft 1024, hop 256, Hann, centered). rate > 1
/// shortens; the result is cropped or zero-padded to out_len.
std::vector<float> time_stretch(const std::vector<float>& x, double rate,
                                std::size_t out_len);

/// Shifts pitch by `semitones` keeping the length: resample by
/// 2^(semitones/12), then time-stretch back to the original length.
Waveform pitch_shift(const Waveform& w, double semitones);

/// (lambda x1 + (1-lambda) x2, lambda l1 + (1-lambda) l2).
std::pair<Waveform, std::vector<float>> mixup(const Waveform& x1,
                                              const std::vector<float>& l1,
                                              const Waveform& x2,
                                              const std::vector<float>& l2,
                                              double lambda);

}  // namespace asd::features
