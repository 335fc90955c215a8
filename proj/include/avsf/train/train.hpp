#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsf/audio/melspec.hpp"
#include "avsf/core/ops.hpp"
#include "avsf/core/rng.hpp"
#include "avsf/data/dataset.hpp"
#include "avsf/model/builder.hpp"

namespace avsf {

struct TrainConfig {
  double base_lr = 0.05;       // eta
  int64_t max_iters = 400;     // n_max
  int64_t warmup_iters = 20;
  double warmup_start_lr = 5e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t batch_size = 8;
  double drop_pathway = 0.5;   // P_d
  double dropout_rate = 0.5;
  uint64_t seed = 0;
  double avs_weight = 0.0;     // auxiliary AVS loss weight in supervised training
  int64_t eval_every = 0;      // 0: evaluate only at the end
  int64_t eval_clips = 1;      // clips averaged per video at evaluation

  void validate() const {
    if (base_lr <= 0) throw ConfigError("train.base_lr", "must be positive");
    if (max_iters < 1) throw ConfigError("train.max_iters", "must be >= 1");
    if (warmup_iters < 0 || warmup_iters >= max_iters)
      throw ConfigError("train.warmup_iters", "must be in [0, max_iters)");
    if (warmup_start_lr < 0) throw ConfigError("train.warmup_start_lr", "must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum", "must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("train.weight_decay", "must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (drop_pathway < 0 || drop_pathway > 1) throw ConfigError("train.drop_pathway", "must be in [0,1]");
    if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("train.dropout_rate", "must be in [0,1)");
    if (avs_weight < 0) throw ConfigError("train.avs_weight", "must be >= 0");
    if (eval_every < 0) throw ConfigError("train.eval_every", "must be >= 0");
    if (eval_clips < 1) throw ConfigError("train.eval_clips", "must be >= 1");
  }
};

// Linear warm-up into a half-period cosine schedule; continuous at the join.
inline double lr_at(int64_t n, const TrainConfig& cfg) {
  if (n < 0 || n > cfg.max_iters) throw std::invalid_argument("lr_at: iteration out of range");
  auto cosine = [&](int64_t i) {
    return cfg.base_lr * 0.5 *
           (std::cos(M_PI * static_cast<double>(i) / static_cast<double>(cfg.max_iters)) + 1.0);
  };
  if (n < cfg.warmup_iters) {
    const double target = cosine(cfg.warmup_iters);
    return cfg.warmup_start_lr + (target - cfg.warmup_start_lr) * static_cast<double>(n) /
                                     static_cast<double>(cfg.warmup_iters);
  }
  return cosine(n);
}

struct SgdState {
  std::vector<std::vector<double>> velocity;  // aligned with model.params()
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Frozen parameters are left untouched.
inline void sgd_step(Model& model, SgdState& state, double lr, double momentum, double weight_decay) {
  auto& params = model.params();
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      state.velocity[i].assign(static_cast<size_t>(params[i].second.size()), 0.0);
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (!p.requires_grad()) continue;
    const std::vector<double>& g = p.grad_or_zeros();
    std::vector<double>& v = state.velocity[i];
    double* pv = p.data();
    for (int64_t j = 0; j < p.size(); ++j) {
      if (!std::isfinite(g[static_cast<size_t>(j)]))
        throw std::runtime_error("sgd_step: non-finite gradient in parameter '" + params[i].first + "'");
      v[static_cast<size_t>(j)] =
          momentum * v[static_cast<size_t>(j)] + g[static_cast<size_t>(j)] + weight_decay * pv[j];
      pv[j] -= lr * v[static_cast<size_t>(j)];
    }
  }
}

struct TrainState {
  int64_t iteration = 0;
  SgdState sgd;
  double best_val = 0.0;
};

// ---------------------------------------------------------------------------
// Batch assembly.
// ---------------------------------------------------------------------------

struct ClipWindow {
  size_t clip_index = 0;
  int64_t frame_offset = 0;
};

inline int64_t window_frames(const ModelConfig& cfg) { return cfg.T * cfg.tau; }

inline double window_seconds(const ModelConfig& cfg, const ClipSample& clip) {
  return static_cast<double>(window_frames(cfg)) / clip.fps;
}

// Log-mel spectrogram of the audio covering [start_seconds, start+window).
inline Tensor audio_window_logmel(const ClipSample& clip, double start_seconds, const ModelConfig& cfg) {
  const int64_t sr = clip.waveform.sample_rate;
  const int64_t need = static_cast<int64_t>(std::llround(window_seconds(cfg, clip) * static_cast<double>(sr)));
  int64_t start = static_cast<int64_t>(std::llround(start_seconds * static_cast<double>(sr)));
  start = std::max<int64_t>(0, std::min<int64_t>(start, static_cast<int64_t>(clip.waveform.samples.size()) - need));
  Waveform seg;
  seg.sample_rate = sr;
  seg.samples.assign(clip.waveform.samples.begin() + start, clip.waveform.samples.begin() + start + need);
  return log_mel(seg, cfg.T_a, cfg.F_mel).bins;
}

inline BatchInputs assemble_batch(const ModelConfig& cfg, const std::vector<ClipSample>& clips,
                                  const std::vector<ClipWindow>& windows) {
  BatchInputs in;
  std::vector<Tensor> slow, fast, audio;
  for (const ClipWindow& w : windows) {
    const ClipSample& c = clips[w.clip_index];
    if (cfg.with_visual) {
      slow.push_back(sample_frames(c.video, w.frame_offset, cfg.tau, cfg.T));
      if (cfg.with_fast)
        fast.push_back(sample_frames(c.video, w.frame_offset, cfg.tau / cfg.alpha_f, cfg.fast_frames()));
    }
    if (cfg.with_audio) {
      const double start = static_cast<double>(w.frame_offset) / c.fps;
      Tensor mel = audio_window_logmel(c, start, cfg);
      audio.push_back(reshape(mel, {1, cfg.F_mel, cfg.T_a}));
    }
  }
  if (!slow.empty()) in.slow = stack_batch(slow);
  if (!fast.empty()) in.fast = stack_batch(fast);
  if (!audio.empty()) in.audio = stack_batch(audio);
  return in;
}

inline int64_t max_frame_offset(const ModelConfig& cfg, const ClipSample& clip) {
  const int64_t span = clip.video.dim(1) - window_frames(cfg);
  if (span < 0)
    throw std::invalid_argument("clip " + clip.clip_id + " has " + std::to_string(clip.video.dim(1)) +
                                " frames, shorter than the " + std::to_string(window_frames(cfg)) +
                                "-frame sampling window");
  return span;
}

// Window start biased to keep the sync anchor (and the click that follows it)
// well inside the window.
inline int64_t anchored_offset(const ModelConfig& cfg, const ClipSample& clip, Rng& rng) {
  const int64_t hi_all = max_frame_offset(cfg, clip);
  int64_t lo = static_cast<int64_t>(std::ceil((clip.sync_anchor_seconds - 0.40) * clip.fps));
  int64_t hi = static_cast<int64_t>(std::floor((clip.sync_anchor_seconds - 0.10) * clip.fps));
  lo = std::max<int64_t>(0, std::min(lo, hi_all));
  hi = std::max<int64_t>(0, std::min(hi, hi_all));
  if (hi < lo) std::swap(lo, hi);
  return rng.uniform_int(lo, hi);
}

inline std::vector<ClipSample> load_all_clips(const Dataset& ds) {
  std::vector<ClipSample> clips;
  clips.reserve(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) clips.push_back(ds.clip(i));
  return clips;
}

// ---------------------------------------------------------------------------
// Evaluation: uniformly spaced clips per video, softmax scores averaged.
// ---------------------------------------------------------------------------

inline double evaluate(const Model& model, const std::vector<ClipSample>& clips, int64_t clips_per_video) {
  if (clips.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (clips_per_video < 1) throw std::invalid_argument("evaluate: clips_per_video must be >= 1");
  const ModelConfig& cfg = model.cfg();
  const Rng eval_rng(0);
  const int64_t K = cfg.num_classes;
  int64_t correct = 0;
  std::vector<size_t> batch_clip;
  std::vector<ClipWindow> windows;
  std::vector<double> scores(clips.size() * static_cast<size_t>(K), 0.0);

  auto flush = [&]() {
    if (windows.empty()) return;
    BatchInputs in = assemble_batch(cfg, clips, windows);
    ForwardResult res = model.forward(in, Mode::eval, eval_rng);
    std::vector<double> p(static_cast<size_t>(K));
    for (size_t i = 0; i < windows.size(); ++i) {
      softmax_row(res.logits.data() + static_cast<int64_t>(i) * K, K, p.data());
      for (int64_t k = 0; k < K; ++k) scores[batch_clip[i] * static_cast<size_t>(K) + static_cast<size_t>(k)] += p[static_cast<size_t>(k)];
    }
    windows.clear();
    batch_clip.clear();
  };

  for (size_t ci = 0; ci < clips.size(); ++ci) {
    const int64_t span = max_frame_offset(cfg, clips[ci]);
    for (int64_t j = 0; j < clips_per_video; ++j) {
      int64_t off;
      if (clips_per_video == 1) off = span / 2;
      else off = (span * j) / (clips_per_video - 1);
      windows.push_back({ci, off});
      batch_clip.push_back(ci);
      if (windows.size() >= 32) flush();
    }
  }
  flush();

  for (size_t ci = 0; ci < clips.size(); ++ci) {
    const int64_t pred = argmax(scores.data() + ci * static_cast<size_t>(K), K);
    if (pred == clips[ci].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

}  // namespace avsf
