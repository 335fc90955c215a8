#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace avsf {

struct Waveform {
  std::vector<double> samples;  // mono, nominally in [-1,1]
  int64_t sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  void check() const {
    if (sample_rate <= 0) throw std::invalid_argument("waveform: sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw std::invalid_argument("waveform: non-finite sample");
  }
};

namespace detail {
inline uint32_t rd_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
inline uint16_t rd_u16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}
}  // namespace detail

// Single-channel PCM 16-bit little-endian WAV.
inline std::string encode_wav(const std::vector<int16_t>& pcm, int64_t sample_rate) {
  const uint32_t data_size = static_cast<uint32_t>(pcm.size() * 2);
  std::string out;
  out.reserve(44 + data_size);
  auto put_u32 = [&](uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&](uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); };
  out.append("RIFF");
  put_u32(36 + data_size);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(sample_rate));
  put_u32(static_cast<uint32_t>(sample_rate * 2));
  put_u16(2);
  put_u16(16);
  out.append("data");
  put_u32(data_size);
  out.append(reinterpret_cast<const char*>(pcm.data()), data_size);
  return out;
}

inline Waveform decode_wav(const std::string& bytes) {
  if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw std::runtime_error("wav: not a RIFF/WAVE file");
  size_t pos = 12;
  int64_t sample_rate = 0;
  int channels = 0, bits = 0, format = 0;
  const char* data = nullptr;
  uint32_t data_size = 0;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const uint32_t size = detail::rd_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + size > bytes.size()) throw std::runtime_error("wav: truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw std::runtime_error("wav: short fmt chunk");
      format = detail::rd_u16(bytes.data() + pos);
      channels = detail::rd_u16(bytes.data() + pos + 2);
      sample_rate = detail::rd_u32(bytes.data() + pos + 4);
      bits = detail::rd_u16(bytes.data() + pos + 14);
    } else if (id == "data") {
      data = bytes.data() + pos;
      data_size = size;
    }
    pos += size + (size & 1);
  }
  if (!data) throw std::runtime_error("wav: missing data chunk");
  if (format != 1 || bits != 16) throw std::runtime_error("wav: only PCM 16-bit supported");
  if (channels != 1) throw std::runtime_error("wav: expected single-channel audio, got " + std::to_string(channels));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(data_size / 2);
  for (size_t i = 0; i < w.samples.size(); ++i) {
    int16_t s;
    std::memcpy(&s, data + 2 * i, 2);
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  w.check();
  return w;
}

inline Waveform load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("wav: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_wav(ss.str());
}

inline void save_wav(const std::string& path, const std::vector<int16_t>& pcm, int64_t sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("wav: cannot write " + path);
  const std::string bytes = encode_wav(pcm, sample_rate);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Linear-interpolation resampling.
inline Waveform resample_linear(const Waveform& in, int64_t target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample: target rate must be positive");
  if (in.sample_rate == target_rate) return in;
  Waveform out;
  out.sample_rate = target_rate;
  const double ratio = static_cast<double>(in.sample_rate) / static_cast<double>(target_rate);
  const int64_t n = static_cast<int64_t>(std::floor(static_cast<double>(in.samples.size()) / ratio));
  out.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const int64_t i0 = static_cast<int64_t>(src);
    const int64_t i1 = std::min<int64_t>(i0 + 1, static_cast<int64_t>(in.samples.size()) - 1);
    const double frac = src - static_cast<double>(i0);
    out.samples[static_cast<size_t>(i)] = (1.0 - frac) * in.samples[static_cast<size_t>(i0)] +
                                          frac * in.samples[static_cast<size_t>(i1)];
  }
  return out;
}

}  // namespace avsf
