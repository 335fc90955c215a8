#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "avsf/core/ops.hpp"
#include "avsf/core/rng.hpp"
#include "avsf/data/dataset.hpp"
#include "avsf/model/builder.hpp"
#include "avsf/train/train.hpp"

namespace avsf {

constexpr double kHardMinDisplacement = 0.5;  // seconds

struct PairContext {
  double span_seconds = 0.0;
  double window_seconds = 0.0;
  double window_start = 0.0;  // visual crop start, seconds
  double anchor_seconds = 0.0;
};

struct SyncPair {
  enum Kind { positive, easy_negative, hard_negative };
  size_t visual_slot = 0;
  size_t audio_slot = 0;  // == visual_slot unless easy negative
  Kind kind = positive;
  bool in_sync = true;
  double audio_start_seconds = 0.0;
  double displacement_seconds = 0.0;  // vs. the audio donor's aligned window
};

namespace detail {

// Displacement of at least 0.5 s whose shifted window still fits the clip.
// Returns false when no such displacement exists.
inline bool hard_displacement(const PairContext& c, Rng& rng, double* out) {
  const double fwd_max = c.span_seconds - c.window_seconds - c.window_start;
  const double bwd_max = c.window_start;
  const double feas = std::max(fwd_max, bwd_max);
  if (feas < kHardMinDisplacement || c.span_seconds - kHardMinDisplacement < kHardMinDisplacement)
    return false;
  const double hi = std::min(c.span_seconds - kHardMinDisplacement, feas);
  if (hi < kHardMinDisplacement) return false;
  const double mag = rng.uniform(kHardMinDisplacement, hi);
  const bool fwd_ok = mag <= fwd_max, bwd_ok = mag <= bwd_max;
  if (!fwd_ok && !bwd_ok) return false;
  bool fwd = fwd_ok;
  if (fwd_ok && bwd_ok) fwd = rng.bernoulli(0.5);
  *out = fwd ? mag : -mag;
  return true;
}

}  // namespace detail

// One pair per batch slot: half positives; negatives all easy before 50% of
// training, then a 1/4 hard + 3/4 easy mix. Hard negatives that cannot fit
// the displaced window fall back to easy and are counted.
inline std::vector<SyncPair> sample_pairs(const std::vector<PairContext>& batch, double phase, Rng& rng,
                                          int64_t* hard_fallbacks = nullptr) {
  const size_t B = batch.size();
  if (B < 2) throw std::invalid_argument("sample_pairs: need at least 2 clips for easy negatives");
  const size_t n_pos = B / 2;
  const size_t n_neg = B - n_pos;
  const size_t n_hard = phase < 0.5 ? 0 : n_neg / 4;

  std::vector<SyncPair::Kind> kinds;
  kinds.insert(kinds.end(), n_pos, SyncPair::positive);
  kinds.insert(kinds.end(), n_hard, SyncPair::hard_negative);
  kinds.insert(kinds.end(), n_neg - n_hard, SyncPair::easy_negative);
  for (size_t i = B - 1; i > 0; --i) std::swap(kinds[i], kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);

  std::vector<SyncPair> pairs(B);
  for (size_t i = 0; i < B; ++i) {
    SyncPair& p = pairs[i];
    p.visual_slot = i;
    SyncPair::Kind kind = kinds[i];
    if (kind == SyncPair::hard_negative) {
      double d;
      if (detail::hard_displacement(batch[i], rng, &d)) {
        p.kind = SyncPair::hard_negative;
        p.audio_slot = i;
        p.in_sync = false;
        p.displacement_seconds = d;
        p.audio_start_seconds = batch[i].window_start + d;
        continue;
      }
      if (hard_fallbacks) ++*hard_fallbacks;
      kind = SyncPair::easy_negative;
    }
    if (kind == SyncPair::easy_negative) {
      size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(B) - 2));
      if (j >= i) ++j;
      p.kind = SyncPair::easy_negative;
      p.audio_slot = j;
      p.in_sync = false;
      double d;
      if (detail::hard_displacement(batch[j], rng, &d)) {
        p.displacement_seconds = d;
        p.audio_start_seconds = batch[j].window_start + d;
      } else {
        p.audio_start_seconds = rng.uniform(0.0, std::max(0.0, batch[j].span_seconds - batch[j].window_seconds));
        p.displacement_seconds = p.audio_start_seconds - batch[j].window_start;
      }
      continue;
    }
    p.kind = SyncPair::positive;
    p.audio_slot = i;
    p.in_sync = true;
    p.displacement_seconds = 0.0;
    p.audio_start_seconds = batch[i].window_start;
  }
  return pairs;
}

struct PairBatch {
  std::vector<SyncPair> pairs;
  Tensor audio;                // [B,1,F,T_a] displaced/donor windows
  std::vector<double> labels;  // 1 = in-sync
};

inline std::vector<PairContext> pair_contexts(const ModelConfig& cfg, const std::vector<ClipSample>& clips,
                                              const std::vector<ClipWindow>& windows) {
  std::vector<PairContext> ctx;
  ctx.reserve(windows.size());
  for (const ClipWindow& w : windows) {
    const ClipSample& c = clips[w.clip_index];
    PairContext pc;
    pc.span_seconds = c.span_seconds();
    pc.window_seconds = window_seconds(cfg, c);
    pc.window_start = static_cast<double>(w.frame_offset) / c.fps;
    pc.anchor_seconds = c.sync_anchor_seconds;
    ctx.push_back(pc);
  }
  return ctx;
}

inline PairBatch build_pair_batch(const ModelConfig& cfg, const std::vector<ClipSample>& clips,
                                  const std::vector<ClipWindow>& windows, double phase, Rng& rng,
                                  int64_t* hard_fallbacks = nullptr) {
  PairBatch pb;
  pb.pairs = sample_pairs(pair_contexts(cfg, clips, windows), phase, rng, hard_fallbacks);
  std::vector<Tensor> mels;
  mels.reserve(pb.pairs.size());
  for (const SyncPair& p : pb.pairs) {
    const ClipSample& donor = clips[windows[p.audio_slot].clip_index];
    Tensor mel = audio_window_logmel(donor, p.audio_start_seconds, cfg);
    mels.push_back(reshape(mel, {1, cfg.F_mel, cfg.T_a}));
    pb.labels.push_back(p.in_sync ? 1.0 : 0.0);
  }
  pb.audio = stack_batch(mels);
  return pb;
}

// Mean over stages of the per-pair BCE. `weights` masks pairs whose visual or
// audio clip was dropped by DropPathway.
inline Tensor avs_loss(const Model& model, const std::map<std::string, Tensor>& sync_visual,
                       const PairBatch& pb, Mode mode, const std::vector<double>& weights) {
  const std::set<std::string>& stages = model.cfg().avs_stages;
  if (stages.empty()) throw std::invalid_argument("avs_loss: model has no AVS stages");
  std::map<std::string, Tensor> audio_feats = model.audio_stage_features(pb.audio, mode, stages);
  Tensor total;
  for (const std::string& st : stages) {
    Tensor logit = model.sync_logit(st, sync_visual.at(st), audio_feats.at(st));
    Tensor bce = sigmoid_bce_weighted(logit, pb.labels, weights);
    total = total.defined() ? add(total, bce) : bce;
  }
  return scale(total, 1.0 / static_cast<double>(stages.size()));
}

// Fraction of pairs classified correctly by the sign of the stage-averaged
// sync logit.
inline double avs_accuracy(const Model& model, const std::map<std::string, Tensor>& sync_visual,
                           const PairBatch& pb, Mode mode) {
  const std::set<std::string>& stages = model.cfg().avs_stages;
  std::map<std::string, Tensor> audio_feats = model.audio_stage_features(pb.audio, mode, stages);
  std::vector<double> mean_logit(pb.pairs.size(), 0.0);
  for (const std::string& st : stages) {
    Tensor logit = model.sync_logit(st, sync_visual.at(st), audio_feats.at(st));
    for (size_t i = 0; i < pb.pairs.size(); ++i) mean_logit[i] += logit.data()[i];
  }
  int64_t correct = 0;
  for (size_t i = 0; i < pb.pairs.size(); ++i) {
    const bool pred = mean_logit[i] > 0.0;
    if (pred == pb.pairs[i].in_sync) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pb.pairs.size());
}

// ---------------------------------------------------------------------------
// Rotation prediction.
// ---------------------------------------------------------------------------

// Rotate all frames of one clip by a shared multiple of 90 degrees.
inline std::pair<Tensor, int64_t> rot_task(const Tensor& frames, Rng& rng) {
  const int64_t k = rng.uniform_int(0, 3);
  return {k == 0 ? frames : rotate90(frames, static_cast<int>(k)), k};
}

inline Tensor rot_loss(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.dim(1) != 4) throw std::invalid_argument("rot_loss: expects 4-way logits");
  return softmax_cross_entropy(logits, labels);
}

}  // namespace avsf
