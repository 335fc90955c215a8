#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "avsf/audio/melspec.hpp"
#include "avsf/audio/wav.hpp"
#include "avsf/core/rng.hpp"
#include "avsf/core/tensor.hpp"
#include "avsf/data/archive.hpp"

namespace avsf {

// Paired video + waveform with the ground-truth audiovisual event time.
struct ClipSample {
  Tensor video;  // [3, T_raw, S, S]
  Waveform waveform;
  int64_t label = 0;
  std::string clip_id;
  double sync_anchor_seconds = 0.0;
  double fps = 0.0;

  double span_seconds() const { return waveform.duration_seconds(); }
};

// Deterministic synthetic audiovisual data. Class identity lives in a moving
// oriented bar (video) and a pure tone on a mel grid (audio); modality_mix is
// the fraction of clips whose class is carried by audio alone (the video is
// then classless noise, and vice versa). Every clip has a classless
// full-frame flash and a broadband click at sync_anchor.
struct DatasetSpec {
  int64_t num_classes = 4;
  int64_t clips_per_class = 24;
  double modality_mix = 0.5;  // rho: fraction of class information carried by audio
  double noise = 0.1;
  uint64_t seed = 0;
  std::string split = "train";
  int64_t frames = 20;             // raw frames per clip
  int64_t spatial = 32;            // square frame size
  int64_t samples_per_frame = 1024;  // 64 ms at 16 kHz
  int64_t sample_rate = 16000;

  double fps() const { return static_cast<double>(sample_rate) / static_cast<double>(samples_per_frame); }
  double span_seconds() const { return static_cast<double>(frames) / fps(); }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
    if (clips_per_class < 1) throw std::invalid_argument("dataset: clips_per_class must be >= 1");
    if (modality_mix < 0.0 || modality_mix > 1.0) throw std::invalid_argument("dataset: modality_mix in [0,1]");
    if (noise < 0.0) throw std::invalid_argument("dataset: noise must be >= 0");
    if (frames < 4) throw std::invalid_argument("dataset: frames must be >= 4");
    if (spatial < 8) throw std::invalid_argument("dataset: spatial must be >= 8");
    if (split != "train" && split != "val") throw std::invalid_argument("dataset: split must be train or val");
    if (sample_rate != 16000) throw std::invalid_argument("dataset: sample rate is fixed at 16 kHz");
  }

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes}, {"clips_per_class", clips_per_class},
            {"modality_mix", modality_mix}, {"noise", noise},           {"seed", seed},
            {"split", split},              {"frames", frames},          {"spatial", spatial},
            {"samples_per_frame", samples_per_frame},                   {"sample_rate", sample_rate}};
  }
  static DatasetSpec from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.num_classes = j.at("num_classes");
    s.clips_per_class = j.at("clips_per_class");
    s.modality_mix = j.at("modality_mix");
    s.noise = j.at("noise");
    s.seed = j.at("seed");
    s.split = j.at("split");
    s.frames = j.at("frames");
    s.spatial = j.at("spatial");
    s.samples_per_frame = j.at("samples_per_frame");
    s.sample_rate = j.at("sample_rate");
    return s;
  }
};

// Class tones sit on a mel-uniform grid well inside the filterbank range, so
// adjacent classes are several mel bins apart.
inline double class_tone_hz(int64_t k, int64_t num_classes) {
  const double m_lo = hz_to_mel(500.0), m_hi = hz_to_mel(4000.0);
  return mel_to_hz(m_lo + (m_hi - m_lo) * (static_cast<double>(k) + 0.5) / static_cast<double>(num_classes));
}

inline ClipSample synth_clip(const DatasetSpec& spec, int64_t index) {
  const int64_t K = spec.num_classes;
  const int64_t label = index % K;
  Rng rng = Rng(spec.seed).fork("split:" + spec.split).fork("clip", static_cast<uint64_t>(index));

  const bool audio_informative = rng.fork("mix").bernoulli(spec.modality_mix);
  const double span = spec.span_seconds();
  const double anchor = rng.fork("anchor").uniform(0.25, span - 0.40);

  const int64_t T = spec.frames, S = spec.spatial;
  ClipSample clip;
  clip.label = label;
  clip.sync_anchor_seconds = anchor;
  clip.fps = spec.fps();
  {
    std::ostringstream id;
    id << spec.split << "_" << index;
    clip.clip_id = id.str();
  }

  // Video: oriented moving bar for the informative case, classless noise
  // otherwise; full-frame flash at the anchor frame.
  clip.video = Tensor::zeros({3, T, S, S});
  Rng vr = rng.fork("video");
  const bool video_informative = !audio_informative;
  const double theta = M_PI * (static_cast<double>(label) + 0.5) / static_cast<double>(K);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double bar_sigma = static_cast<double>(S) / 10.0;
  const double phase0 = vr.uniform();
  const int64_t flash_frame = std::min<int64_t>(T - 1, std::llround(anchor * clip.fps));
  static const double chan_gain[3] = {1.0, 0.8, 0.6};
  for (int64_t t = 0; t < T; ++t) {
    const double pos = (std::fmod(phase0 + static_cast<double>(t) / static_cast<double>(T), 1.0) - 0.5) *
                       static_cast<double>(S) * 1.2;
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        double v = 0.1;
        if (video_informative) {
          const double proj = ct * (static_cast<double>(x) - S / 2.0) + st * (static_cast<double>(y) - S / 2.0);
          const double d = proj - pos;
          v += 0.9 * std::exp(-d * d / (2.0 * bar_sigma * bar_sigma));
        }
        for (int64_t c = 0; c < 3; ++c)
          clip.video.data()[((c * T + t) * S + y) * S + x] = v * chan_gain[c];
      }
  }
  if (!video_informative) {
    for (int64_t i = 0; i < clip.video.size(); ++i) clip.video.data()[i] += 0.2 * vr.normal();
  }
  if (spec.noise > 0)
    for (int64_t i = 0; i < clip.video.size(); ++i) clip.video.data()[i] += spec.noise * vr.normal();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) clip.video.data()[((c * T + flash_frame) * S + y) * S + x] += 1.0;

  // Audio: class tone (or classless noise) plus a broadband click at the
  // anchor; rendered directly as the PCM16 payload so files round-trip
  // bit-exactly.
  Rng ar = rng.fork("audio");
  const int64_t n_samples = T * spec.samples_per_frame;
  const double sr = static_cast<double>(spec.sample_rate);
  const double tone_hz = class_tone_hz(label, K);
  const double phase = ar.uniform(0.0, 2.0 * M_PI);
  std::vector<double> wave(static_cast<size_t>(n_samples), 0.0);
  for (int64_t i = 0; i < n_samples; ++i) {
    const double tsec = static_cast<double>(i) / sr;
    double v;
    if (audio_informative)
      v = 0.35 * std::sin(2.0 * M_PI * tone_hz * tsec + phase);
    else
      v = 0.25 * ar.normal();
    if (tsec >= anchor && tsec < anchor + 0.05) v += 0.6 * ar.normal();
    if (spec.noise > 0) v += 0.05 * spec.noise * ar.normal();
    wave[static_cast<size_t>(i)] = v;
  }
  clip.waveform.sample_rate = spec.sample_rate;
  clip.waveform.samples.resize(wave.size());
  for (size_t i = 0; i < wave.size(); ++i) {
    const double c = std::max(-1.0, std::min(1.0, wave[i]));
    const int16_t pcm = static_cast<int16_t>(std::lround(c * 32767.0));
    clip.waveform.samples[i] = static_cast<double>(pcm) / 32768.0;
  }
  return clip;
}

inline std::string encode_clip(const ClipSample& clip, int64_t sample_rate) {
  std::ostringstream video_bytes;
  save_tensor(video_bytes, clip.video);
  std::vector<int16_t> pcm(clip.waveform.samples.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    pcm[i] = static_cast<int16_t>(std::lround(clip.waveform.samples[i] * 32768.0));
  nlohmann::json meta = {{"clip_id", clip.clip_id},
                         {"label", clip.label},
                         {"anchor", clip.sync_anchor_seconds},
                         {"fps", clip.fps},
                         {"sample_rate", sample_rate}};
  return encode_archive({{"meta", meta.dump()},
                         {"video", video_bytes.str()},
                         {"audio", encode_wav(pcm, sample_rate)}});
}

inline ClipSample decode_clip(const std::string& bytes) {
  ClipSample clip;
  bool have_meta = false, have_video = false, have_audio = false;
  for (auto& [name, payload] : decode_archive(bytes)) {
    if (name == "meta") {
      const nlohmann::json meta = nlohmann::json::parse(payload);
      clip.clip_id = meta.at("clip_id");
      clip.label = meta.at("label");
      clip.sync_anchor_seconds = meta.at("anchor");
      clip.fps = meta.at("fps");
      have_meta = true;
    } else if (name == "video") {
      std::istringstream is(payload);
      clip.video = load_tensor(is);
      have_video = true;
    } else if (name == "audio") {
      clip.waveform = decode_wav(payload);
      have_audio = true;
    }
  }
  if (!have_meta || !have_video || !have_audio) throw std::runtime_error("clip file: missing entries");
  return clip;
}

inline int env_threads() {
  if (const char* s = std::getenv("AVSF_THREADS")) {
    const int n = std::atoi(s);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(4u, hw ? hw : 1u));
}

// Write every clip file plus the manifest; returns the manifest path.
// Clip contents depend only on (spec, index), so generation parallelizes
// freely and re-runs are byte-identical.
inline std::string generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int64_t n = spec.num_classes * spec.clips_per_class;
  std::vector<std::string> checksums(static_cast<size_t>(n));
  std::vector<std::string> paths(static_cast<size_t>(n));
  std::vector<int64_t> labels(static_cast<size_t>(n));
  std::vector<double> anchors(static_cast<size_t>(n));
  std::vector<std::string> ids(static_cast<size_t>(n));

  auto work = [&](int64_t i) {
    const ClipSample clip = synth_clip(spec, i);
    const std::string bytes = encode_clip(clip, spec.sample_rate);
    char name[64];
    std::snprintf(name, sizeof name, "clip_%05lld.avsa", static_cast<long long>(i));
    write_file((fs::path(out_dir) / name).string(), bytes);
    char sum[32];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    checksums[static_cast<size_t>(i)] = sum;
    paths[static_cast<size_t>(i)] = name;
    labels[static_cast<size_t>(i)] = clip.label;
    anchors[static_cast<size_t>(i)] = clip.sync_anchor_seconds;
    ids[static_cast<size_t>(i)] = clip.clip_id;
  };

  const int threads = env_threads();
  if (threads <= 1 || n < 4) {
    for (int64_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int64_t i = t; i < n; i += threads) work(i);
      });
    for (auto& th : pool) th.join();
  }

  std::ostringstream manifest;
  manifest << "clip_id,path,label,anchor,checksum\n";
  manifest.setf(std::ios::fixed);
  manifest.precision(9);
  for (int64_t i = 0; i < n; ++i)
    manifest << ids[static_cast<size_t>(i)] << ',' << paths[static_cast<size_t>(i)] << ','
             << labels[static_cast<size_t>(i)] << ',' << anchors[static_cast<size_t>(i)] << ','
             << checksums[static_cast<size_t>(i)] << '\n';
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  write_file(manifest_path, manifest.str());
  write_file((fs::path(out_dir) / "dataset.json").string(), spec.to_json().dump(2) + "\n");
  return manifest_path;
}

// Streaming view over a generated dataset: manifest rows are resident, clip
// tensors are read (and checksummed) on demand.
class Dataset {
 public:
  struct Row {
    std::string clip_id, path, checksum;
    int64_t label = 0;
    double anchor = 0.0;
  };

  static Dataset load(const std::string& manifest_path) {
    Dataset d;
    namespace fs = std::filesystem;
    d.dir_ = fs::path(manifest_path).parent_path().string();
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("dataset: cannot open manifest " + manifest_path);
    std::string line;
    if (!std::getline(f, line) || line != "clip_id,path,label,anchor,checksum")
      throw std::runtime_error("dataset: bad manifest header");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      Row r;
      std::istringstream ss(line);
      std::string field;
      std::getline(ss, r.clip_id, ',');
      std::getline(ss, r.path, ',');
      std::getline(ss, field, ',');
      r.label = std::stoll(field);
      std::getline(ss, field, ',');
      r.anchor = std::stod(field);
      std::getline(ss, r.checksum, ',');
      d.rows_.push_back(std::move(r));
    }
    const std::string spec_path = (fs::path(d.dir_) / "dataset.json").string();
    if (fs::exists(spec_path)) d.spec_ = DatasetSpec::from_json(nlohmann::json::parse(read_file(spec_path)));
    return d;
  }

  size_t size() const { return rows_.size(); }
  const Row& row(size_t i) const { return rows_.at(i); }
  const std::vector<Row>& rows() const { return rows_; }
  const DatasetSpec& spec() const { return spec_; }

  ClipSample clip(size_t i) const {
    const Row& r = rows_.at(i);
    const std::string bytes = read_file((std::filesystem::path(dir_) / r.path).string());
    char sum[32];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    if (r.checksum != sum)
      throw std::runtime_error("dataset: checksum mismatch for clip " + r.clip_id + " (" + r.path + ")");
    return decode_clip(bytes);
  }

 private:
  std::string dir_;
  std::vector<Row> rows_;
  DatasetSpec spec_;
};

}  // namespace avsf
