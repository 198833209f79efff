// src/features/spectral.cpp

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

#include "asd/features/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "asd/common.hpp"

namespace asd::features {
namespace {
// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* cplx = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

RealFft::RealFft(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
  if (n == 0) throw InvalidArgument("RealFft: size must be positive");
  std::lock_guard<std::mutex> lock(planner_mutex());
  impl_->real = fftw_alloc_real(n);
  impl_->cplx = fftw_alloc_complex(n / 2 + 1);
  const int ni = static_cast<int>(n);
  impl_->fwd = fftw_plan_dft_r2c_1d(ni, impl_->real, impl_->cplx, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(ni, impl_->cplx, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->inv);
  fftw_free(impl_->real);
  fftw_free(impl_->cplx);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  std::copy_n(in.begin(), n_, impl_->real);
  fftw_execute(impl_->fwd);
  for (std::size_t k = 0; k < bins(); ++k)
    out[k] = {impl_->cplx[k][0], impl_->cplx[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  for (std::size_t k = 0; k < bins(); ++k) {
    impl_->cplx[k][0] = in[k].real();
    impl_->cplx[k][1] = in[k].imag();
  }
  // c2r destroys its input array; it is rewritten on every call.
  fftw_execute(impl_->inv);
  std::copy_n(impl_->real, n_, out.begin());
}

std::size_t StftConfig::window_length() const {
  if (!(window_ms > 0)) throw InvalidArgument("stft: window_ms must be positive");
  return static_cast<std::size_t>(std::llround(window_ms * kSampleRate / 1000.0));
}

std::size_t StftConfig::hop_length() const {
  if (!(hop_fraction > 0 && hop_fraction <= 1))
    throw InvalidArgument("stft: hop_fraction must be in (0, 1]");
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(window_length() * hop_fraction)));
}

std::vector<double> make_window(WindowFunction fn, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (fn == WindowFunction::Hann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
  return w;
}

Spectrogram stft_magnitude(const Waveform& w, const StftConfig& cfg) {
  const std::size_t win = cfg.window_length();
  const std::size_t hop = cfg.hop_length();
  if (w.size() < win)
    throw InvalidArgument("stft: signal has " + std::to_string(w.size()) +
                          " samples, window needs " + std::to_string(win));
  Spectrogram s;
  s.frames = (w.size() - win) / hop + 1;
  s.bins = win / 2 + 1;
  s.mag.resize(s.frames * s.bins);
  const auto window = make_window(cfg.window, win);
  RealFft fft(win);
  std::vector<double> frame(win);
  std::vector<std::complex<double>> spec(s.bins);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const float* src = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) frame[i] = src[i] * window[i];
    fft.forward(frame, spec);
    for (std::size_t k = 0; k < s.bins; ++k)
      s.mag[t * s.bins + k] = static_cast<float>(std::abs(spec[k]));
  }
  return s;
}

std::vector<float> full_dft_magnitude(const Waveform& w) {
  if (w.empty()) throw InvalidArgument("full_dft_magnitude: empty signal");
  RealFft fft(w.size());
  std::vector<double> buf(w.samples.begin(), w.samples.end());
  std::vector<std::complex<double>> spec(fft.bins());
  fft.forward(buf, spec);
  std::vector<float> mag(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) mag[k] = static_cast<float>(std::abs(spec[k]));
  return mag;
}

FeatureBundle extract_features(const Waveform& w) {
  FeatureBundle b;
  b.spec_short = stft_magnitude(w, short_stft());
  b.spec_long = stft_magnitude(w, long_stft());
  b.dft_mag = full_dft_magnitude(w);
  return b;
}

std::size_t peak_bin(std::span<const float> mag) {
  if (mag.empty()) throw InvalidArgument("peak_bin: empty spectrum");
  return static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
}

}  // namespace asd::features
