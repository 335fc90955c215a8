#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "avsf/audio/fft.hpp"
#include "avsf/audio/wav.hpp"
#include "avsf/core/tensor.hpp"

namespace avsf {

// 32 ms windows with 16 ms steps at 16 kHz.
constexpr int64_t kStftWindow = 512;
constexpr int64_t kStftHop = 256;
constexpr double kLogMelEps = 1e-6;
constexpr double kMelLowHz = 0.0;
constexpr double kMelHighHz = 8000.0;

struct Spectrogram {
  Tensor bins;  // [F, T]
  double mel_low_hz = kMelLowHz;
  double mel_high_hz = kMelHighHz;
  double hop_seconds = 0.0;
  double window_seconds = 0.0;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Magnitude STFT with a periodic Hann window and centered reflection padding.
// Output is [window/2+1, frames].
inline Tensor stft(const Waveform& wave, int64_t window_len = kStftWindow, int64_t hop = kStftHop) {
  wave.check();
  if (window_len < 2 || (window_len & (window_len - 1)) != 0)
    throw std::invalid_argument("stft: window length must be a power of two, got " + std::to_string(window_len));
  if (hop != window_len / 2)
    throw std::invalid_argument("stft: hop must be window/2, got " + std::to_string(hop));
  const int64_t L = static_cast<int64_t>(wave.samples.size());
  if (L < window_len)
    throw std::invalid_argument("stft: waveform of " + std::to_string(L) +
                                " samples is shorter than one " + std::to_string(window_len) +
                                "-sample window");
  const int64_t pad = window_len / 2;
  const int64_t frames = (L + 2 * pad - window_len) / hop + 1;
  const int64_t bins = window_len / 2 + 1;

  std::vector<double> window(static_cast<size_t>(window_len));
  for (int64_t i = 0; i < window_len; ++i)
    window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                                          static_cast<double>(window_len));

  auto sample_at = [&](int64_t idx) {  // reflection without repeating the edge
    if (idx < 0) idx = -idx;
    if (idx >= L) idx = 2 * L - 2 - idx;
    return wave.samples[static_cast<size_t>(idx)];
  };

  Tensor out = Tensor::zeros({bins, frames});
  std::vector<std::complex<double>> buf(static_cast<size_t>(window_len));
  for (int64_t t = 0; t < frames; ++t) {
    const int64_t start = t * hop - pad;
    for (int64_t i = 0; i < window_len; ++i)
      buf[static_cast<size_t>(i)] = sample_at(start + i) * window[static_cast<size_t>(i)];
    fft_inplace(buf);
    for (int64_t k = 0; k < bins; ++k) out.data()[k * frames + t] = std::abs(buf[static_cast<size_t>(k)]);
  }
  return out;
}

// Triangular filters with peaks at mel-uniform centers (HTK mel scale).
inline Tensor mel_filterbank(int64_t n_mels, double f_low_hz, double f_high_hz, int64_t n_fft_bins,
                             int64_t sample_rate) {
  if (n_mels < 1) throw std::invalid_argument("mel_filterbank: n_mels must be >= 1");
  if (!(0.0 <= f_low_hz && f_low_hz < f_high_hz && f_high_hz <= static_cast<double>(sample_rate) / 2.0))
    throw std::invalid_argument("mel_filterbank: need 0 <= f_low < f_high <= sample_rate/2");
  const double m_low = hz_to_mel(f_low_hz), m_high = hz_to_mel(f_high_hz);
  std::vector<double> edges(static_cast<size_t>(n_mels + 2));
  for (int64_t i = 0; i < n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] =
        mel_to_hz(m_low + (m_high - m_low) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  const double bin_hz = (static_cast<double>(sample_rate) / 2.0) / static_cast<double>(n_fft_bins - 1);
  Tensor fb = Tensor::zeros({n_mels, n_fft_bins});
  for (int64_t m = 0; m < n_mels; ++m) {
    const double f0 = edges[static_cast<size_t>(m)], f1 = edges[static_cast<size_t>(m + 1)],
                 f2 = edges[static_cast<size_t>(m + 2)];
    double sum = 0.0;
    for (int64_t k = 0; k < n_fft_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > f0 && f < f1) w = (f - f0) / (f1 - f0);
      else if (f >= f1 && f < f2) w = (f2 - f) / (f2 - f1);
      fb.data()[m * n_fft_bins + k] = w;
      sum += w;
    }
    if (sum <= 0.0)
      throw std::invalid_argument("mel_filterbank: filter " + std::to_string(m) +
                                  " covers no FFT bin; n_mels too large for the FFT resolution");
  }
  return fb;
}

inline std::vector<double> mel_center_frequencies(int64_t n_mels, double f_low_hz, double f_high_hz) {
  const double m_low = hz_to_mel(f_low_hz), m_high = hz_to_mel(f_high_hz);
  std::vector<double> centers(static_cast<size_t>(n_mels));
  for (int64_t i = 0; i < n_mels; ++i)
    centers[static_cast<size_t>(i)] =
        mel_to_hz(m_low + (m_high - m_low) * static_cast<double>(i + 1) / static_cast<double>(n_mels + 1));
  return centers;
}

// Log-mel spectrogram with an exact frame count. Raw hop arithmetic gives
// target-2..target+2 frames for a matched-duration waveform; the time axis is
// centered and edge-padded or cropped to exactly `target_frames`.
inline Spectrogram log_mel(const Waveform& wave, int64_t target_frames, int64_t n_mels) {
  if (wave.sample_rate != 16000)
    throw std::invalid_argument("log_mel: expected a 16 kHz waveform, got " +
                                std::to_string(wave.sample_rate) + " Hz (resample first)");
  if (target_frames < 1) throw std::invalid_argument("log_mel: target_frames must be >= 1");
  const int64_t L = static_cast<int64_t>(wave.samples.size());
  const int64_t raw_frames = L / kStftHop + 1;
  if (std::abs(raw_frames - target_frames) > 2) {
    const double measured = wave.duration_seconds();
    const double expected = static_cast<double>(target_frames) * static_cast<double>(kStftHop) / 16000.0;
    throw std::invalid_argument("log_mel: waveform spans " + std::to_string(measured) +
                                " s but " + std::to_string(target_frames) + " frames expect about " +
                                std::to_string(expected) + " s");
  }

  Tensor mag = stft(wave, kStftWindow, kStftHop);
  const int64_t bins = mag.dim(0), frames = mag.dim(1);
  Tensor fb = mel_filterbank(n_mels, kMelLowHz, kMelHighHz, bins, wave.sample_rate);

  Tensor mel = Tensor::zeros({n_mels, frames});
  for (int64_t m = 0; m < n_mels; ++m)
    for (int64_t k = 0; k < bins; ++k) {
      const double w = fb.data()[m * bins + k];
      if (w == 0.0) continue;
      const double* row = mag.data() + k * frames;
      double* orow = mel.data() + m * frames;
      for (int64_t t = 0; t < frames; ++t) orow[t] += w * row[t] * row[t];
    }
  for (int64_t i = 0; i < mel.size(); ++i) mel.data()[i] = std::log(mel.data()[i] + kLogMelEps);

  // Center-align onto the target frame count, replicating edge columns.
  Tensor out = Tensor::zeros({n_mels, target_frames});
  const int64_t shift = (target_frames - frames) / 2;  // >0 pad, <0 crop
  for (int64_t m = 0; m < n_mels; ++m)
    for (int64_t t = 0; t < target_frames; ++t) {
      int64_t src = t - shift;
      src = std::max<int64_t>(0, std::min<int64_t>(frames - 1, src));
      out.data()[m * target_frames + t] = mel.data()[m * frames + src];
    }

  Spectrogram spec;
  spec.bins = out;
  spec.hop_seconds = static_cast<double>(kStftHop) / 16000.0;
  spec.window_seconds = static_cast<double>(kStftWindow) / 16000.0;
  return spec;
}

}  // namespace avsf
