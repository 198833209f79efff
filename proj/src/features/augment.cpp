// src/features/augment.cpp

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

#include "asd/features/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "asd/features/spectral.hpp"

namespace asd::features {
namespace {

constexpr std::size_t kVocoderFft = 1024;
constexpr std::size_t kVocoderHop = 256;
constexpr double kSincZeros = 16.0;
constexpr int kTableRes = 256;  // kernel samples per input sample

// Reflect index into [0, n) without repeating the edge sample.
std::size_t mirror(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long long>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

double wrap_phase(double p) {
  return p - 2.0 * std::numbers::pi * std::round(p / (2.0 * std::numbers::pi));
}

}  // namespace

void TripletConfig::validate() const {
  if (!std::isfinite(alpha_db_min) || !std::isfinite(alpha_db_max) || alpha_db_min > alpha_db_max)
    throw InvalidArgument("triplet: alpha range must be a finite interval");
  if (!(beta_min > 0) || !(beta_max >= beta_min) || !std::isfinite(beta_max))
    throw InvalidArgument("triplet: beta magnitudes must be positive with min <= max");
  if (!(tau > 0)) throw InvalidArgument("triplet: tau must be positive");
  if (!(gamma >= 0)) throw InvalidArgument("triplet: gamma must be non-negative");
}

double TripletConfig::sample_alpha(Rng& rng) const {
  return std::uniform_real_distribution<double>(alpha_db_min, alpha_db_max)(rng);
}

double TripletConfig::sample_beta(Rng& rng) const {
  const double mag = std::uniform_real_distribution<double>(beta_min, beta_max)(rng);
  return std::bernoulli_distribution(0.5)(rng) ? mag : -mag;
}

double snr_noise_gain(double anchor_norm, double noise_norm, double alpha_db) {
  if (!(noise_norm > 0)) throw InvalidArgument("snr_mix: noise has zero norm");
  return std::pow(10.0, -alpha_db / 20.0) * anchor_norm / noise_norm;
}

Waveform snr_mix(const Waveform& anchor, const Waveform& noise, double alpha_db) {
  if (anchor.empty() || noise.empty()) throw InvalidArgument("snr_mix: empty input");
  Waveform tiled;
  tiled.samples.resize(anchor.size());
  for (std::size_t i = 0; i < anchor.size(); ++i)
    tiled.samples[i] = noise.samples[i % noise.size()];
  const double noise_norm = l2_norm(tiled);
  if (!(noise_norm > 0)) throw InvalidArgument("snr_mix: noise has zero norm");
  const double anchor_norm = l2_norm(anchor);
  if (anchor_norm == 0) return anchor;
  const double g = snr_noise_gain(anchor_norm, noise_norm, alpha_db);
  Waveform out = anchor;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.samples[i] = static_cast<float>(anchor.samples[i] + g * tiled.samples[i]);
  return out;
}

std::vector<float> resample_sinc(const std::vector<float>& x, double step,
                                 std::size_t out_len) {
  if (!(step > 0)) throw InvalidArgument("resample: step must be positive");
  std::vector<float> y(out_len, 0.0f);
  if (x.empty()) return y;
  const double fc = std::min(1.0, 1.0 / step);
  const double half = kSincZeros / fc;
  // Tabulated fc * sinc(fc d) * hann(d / half) for d in [0, half].
  const std::size_t table_len = static_cast<std::size_t>(std::ceil(half * kTableRes)) + 2;
  std::vector<double> table(table_len);
  for (std::size_t i = 0; i < table_len; ++i) {
    const double d = static_cast<double>(i) / kTableRes;
    if (d >= half) {
      table[i] = 0;
      continue;
    }
    const double a = std::numbers::pi * fc * d;
    const double sinc = d == 0 ? 1.0 : std::sin(a) / a;
    table[i] = fc * sinc * (0.5 + 0.5 * std::cos(std::numbers::pi * d / half));
  }
  const long long n = static_cast<long long>(x.size());
  for (std::size_t i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) * step;
    const long long lo = std::max<long long>(0, static_cast<long long>(std::ceil(t - half)));
    const long long hi = std::min<long long>(n - 1, static_cast<long long>(std::floor(t + half)));
    double acc = 0;
    for (long long k = lo; k <= hi; ++k) {
      const double pos = std::abs(t - static_cast<double>(k)) * kTableRes;
      const auto j = static_cast<std::size_t>(pos);
      if (j + 1 >= table_len) continue;
      const double frac = pos - static_cast<double>(j);
      acc += x[static_cast<std::size_t>(k)] * (table[j] + frac * (table[j + 1] - table[j]));
    }
    y[i] = static_cast<float>(acc);
  }
  return y;
}

std::vector<float> time_stretch(const std::vector<float>& x, double rate,
                                std::size_t out_len) {
  if (!(rate > 0)) throw InvalidArgument("time_stretch: rate must be positive");
  std::vector<float> y(out_len, 0.0f);
  if (x.empty()) return y;
  const std::size_t nfft = kVocoderFft, hop = kVocoderHop, bins = nfft / 2 + 1;
  const std::size_t pad = nfft / 2;
  const std::size_t frames = 1 + x.size() / hop;
  const auto window = make_window(WindowFunction::Hann, nfft);
  RealFft fft(nfft);

  std::vector<std::vector<std::complex<double>>> spec(frames + 1,
                                                      std::vector<std::complex<double>>(bins));
  std::vector<double> frame(nfft);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < nfft; ++i) {
      const long long src = static_cast<long long>(t * hop + i) - static_cast<long long>(pad);
      frame[i] = x[mirror(src, x.size())] * window[i];
    }
    fft.forward(frame, spec[t]);
  }
  // Row `frames` stays zero, as the interpolation partner of the last frame.
  std::vector<double> mag((frames + 1) * bins, 0.0), ang((frames + 1) * bins, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < bins; ++k) {
      mag[t * bins + k] = std::abs(spec[t][k]);
      ang[t * bins + k] = std::arg(spec[t][k]);
    }

  std::vector<double> advance(bins), phase(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    advance[k] = 2.0 * std::numbers::pi * static_cast<double>(k * hop) / static_cast<double>(nfft);
    phase[k] = ang[k];
  }
  const auto steps = static_cast<std::size_t>(std::ceil(static_cast<double>(frames) / rate));
  const std::size_t total = (steps - 1) * hop + nfft;
  std::vector<double> ola(total, 0.0), wsum(total, 0.0);
  std::vector<std::complex<double>> cur(bins);
  for (std::size_t s = 0; s < steps; ++s) {
    const double ts = static_cast<double>(s) * rate;
    const auto i0 = std::min(static_cast<std::size_t>(ts), frames - 1);
    const double a = ts - static_cast<double>(i0);
    const double* m0 = &mag[i0 * bins];
    const double* m1 = &mag[(i0 + 1) * bins];
    const double* p0 = &ang[i0 * bins];
    const double* p1 = &ang[(i0 + 1) * bins];
    for (std::size_t k = 0; k < bins; ++k) {
      const double m = (1.0 - a) * m0[k] + a * m1[k];
      cur[k] = {m * std::cos(phase[k]), m * std::sin(phase[k])};
      phase[k] += wrap_phase(p1[k] - p0[k] - advance[k]) + advance[k];
    }
    fft.inverse(cur, frame);
    for (std::size_t i = 0; i < nfft; ++i) {
      ola[s * hop + i] += frame[i] / static_cast<double>(nfft) * window[i];
      wsum[s * hop + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < out_len && i + pad < total; ++i) {
    const double w = wsum[i + pad];
    y[i] = w > 1e-11 ? static_cast<float>(ola[i + pad] / w) : 0.0f;
  }
  return y;
}

Waveform pitch_shift(const Waveform& w, double semitones) {
  if (w.empty()) throw InvalidArgument("pitch_shift: empty signal");
  if (!(std::abs(semitones) <= 24.0))
    throw InvalidArgument("pitch_shift: |semitones| must be at most 24");
  const double step = std::pow(2.0, semitones / 12.0);
  const auto mid_len = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(static_cast<double>(w.size()) / step)));
  const auto shifted = semitones == 0 ? w.samples : resample_sinc(w.samples, step, mid_len);
  const double rate = static_cast<double>(shifted.size()) / static_cast<double>(w.size());
  Waveform out;
  out.samples = time_stretch(shifted, rate, w.size());
  return out;
}

std::pair<Waveform, std::vector<float>> mixup(const Waveform& x1,
                                              const std::vector<float>& l1,
                                              const Waveform& x2,
                                              const std::vector<float>& l2,
                                              double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("mixup: lambda outside [0, 1]");
  if (x1.size() != x2.size()) throw InvalidArgument("mixup: waveform lengths differ");
  if (l1.size() != l2.size()) throw InvalidArgument("mixup: label dimensions differ");
  const double mu = 1.0 - lambda;
  std::pair<Waveform, std::vector<float>> out;
  out.first.samples.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i)
    out.first.samples[i] = static_cast<float>(lambda * x1.samples[i] + mu * x2.samples[i]);
  out.second.resize(l1.size());
  for (std::size_t i = 0; i < l1.size(); ++i)
    out.second[i] = static_cast<float>(lambda * l1[i] + mu * l2[i]);
  return out;
}

}  // namespace asd::features
