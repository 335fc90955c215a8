#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "avsf/ssl/sync.hpp"
#include "avsf/train/train.hpp"

namespace avsf {

struct RunLogs {
  std::string metrics_csv;
  std::string events_jsonl;
};

struct TrainResult {
  TrainState state;
  double final_val_acc = 0.0;
  double final_sync_acc = 0.0;
  RunLogs logs;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<double> draw_keep_mask(const Model& model, double p_drop, Rng& rng, int64_t n) {
  std::vector<double> keep(static_cast<size_t>(n), 1.0);
  if (model.cfg().with_audio && p_drop > 0.0)
    for (int64_t i = 0; i < n; ++i) keep[static_cast<size_t>(i)] = rng.bernoulli(p_drop) ? 0.0 : 1.0;
  return keep;
}

}  // namespace detail

// Supervised training: SGD with momentum and weight decay, warm-up plus
// half-period cosine schedule, per-clip DropPathway, optional auxiliary AVS.
inline TrainResult train_supervised(Model& model, const std::vector<ClipSample>& train_clips,
                                    const std::vector<ClipSample>& val_clips, const TrainConfig& cfg) {
  cfg.validate();
  if (train_clips.empty()) throw std::invalid_argument("train: empty training set");
  const ModelConfig& mc = model.cfg();
  const Rng root(cfg.seed);
  TrainResult out;
  std::ostringstream csv, events;
  csv << "iter,loss,lr,dropped_frac\n";

  const bool use_avs = cfg.avs_weight > 0.0 && model.has_sync_heads();
  for (int64_t n = 0; n < cfg.max_iters; ++n) {
    const Rng iter_rng = root.fork("iter", static_cast<uint64_t>(n));
    Rng batch_rng = iter_rng.fork("batch");
    Rng offset_rng = iter_rng.fork("offset");
    Rng drop_rng = iter_rng.fork("drop");

    std::vector<ClipWindow> windows;
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
      const size_t ci = static_cast<size_t>(batch_rng.uniform_int(0, static_cast<int64_t>(train_clips.size()) - 1));
      int64_t off;
      if (use_avs) off = anchored_offset(mc, train_clips[ci], offset_rng);
      else off = offset_rng.uniform_int(0, max_frame_offset(mc, train_clips[ci]));
      windows.push_back({ci, off});
      labels.push_back(train_clips[ci].label);
    }
    std::vector<double> keep = detail::draw_keep_mask(model, cfg.drop_pathway, drop_rng, cfg.batch_size);

    BatchInputs in = assemble_batch(mc, train_clips, windows);
    in.audio_keep = keep;
    ForwardResult res = model.forward(in, Mode::train, iter_rng);
    Tensor loss = softmax_cross_entropy(res.logits, labels);
    if (use_avs) {
      Rng pair_rng = iter_rng.fork("pairs");
      const double phase = static_cast<double>(n) / static_cast<double>(cfg.max_iters);
      PairBatch pb = build_pair_batch(mc, train_clips, windows, phase, pair_rng);
      std::vector<double> weights(pb.pairs.size(), 1.0);
      for (size_t i = 0; i < pb.pairs.size(); ++i)
        weights[i] = keep[pb.pairs[i].visual_slot] * keep[pb.pairs[i].audio_slot];
      loss = add(loss, scale(avs_loss(model, res.sync_visual, pb, Mode::train, weights), cfg.avs_weight));
    }
    model.zero_grad();
    backward(loss);
    const double lr = lr_at(n, cfg);
    sgd_step(model, out.state.sgd, lr, cfg.momentum, cfg.weight_decay);
    out.state.iteration = n + 1;

    double dropped = 0.0;
    for (double k : keep) dropped += 1.0 - k;
    dropped /= static_cast<double>(keep.size());
    csv << n << ',' << detail::fmt_double(loss.item()) << ',' << detail::fmt_double(lr) << ','
        << detail::fmt_double(dropped) << '\n';

    if (cfg.eval_every > 0 && (n + 1) % cfg.eval_every == 0 && !val_clips.empty()) {
      const double acc = evaluate(model, val_clips, cfg.eval_clips);
      out.state.best_val = std::max(out.state.best_val, acc);
      events << "{\"iter\":" << (n + 1) << ",\"val_acc\":" << detail::fmt_double(acc) << "}\n";
    }
  }
  if (!val_clips.empty()) {
    out.final_val_acc = evaluate(model, val_clips, cfg.eval_clips);
    out.state.best_val = std::max(out.state.best_val, out.final_val_acc);
    events << "{\"iter\":" << cfg.max_iters << ",\"val_acc\":" << detail::fmt_double(out.final_val_acc)
           << ",\"final\":true}\n";
  }
  out.logs.metrics_csv = csv.str();
  out.logs.events_jsonl = events.str();
  return out;
}

// Synchronization-pair accuracy over a clip set, eval mode, with the mature
// (hard-mixed) negative distribution.
inline double evaluate_sync(const Model& model, const std::vector<ClipSample>& clips, uint64_t seed) {
  if (clips.size() < 2) throw std::invalid_argument("evaluate_sync: need at least 2 clips");
  const ModelConfig& mc = model.cfg();
  const Rng root = Rng(seed).fork("sync_eval");
  const int64_t B = std::min<int64_t>(16, static_cast<int64_t>(clips.size()));
  double acc_sum = 0.0;
  int64_t batches = 0;
  for (size_t start = 0; start < clips.size(); start += static_cast<size_t>(B)) {
    const Rng brng = root.fork("batch", static_cast<uint64_t>(batches));
    Rng offset_rng = brng.fork("offset");
    std::vector<ClipWindow> windows;
    for (int64_t i = 0; i < B; ++i) {
      const size_t ci = (start + static_cast<size_t>(i)) % clips.size();
      windows.push_back({ci, anchored_offset(mc, clips[ci], offset_rng)});
    }
    BatchInputs in = assemble_batch(mc, clips, windows);
    ForwardResult res = model.forward(in, Mode::eval, brng);
    Rng pair_rng = brng.fork("pairs");
    PairBatch pb = build_pair_batch(mc, clips, windows, 1.0, pair_rng);
    acc_sum += avs_accuracy(model, res.sync_visual, pb, Mode::eval);
    ++batches;
  }
  return acc_sum / static_cast<double>(batches);
}

// Self-supervised pretraining with AVS + rotation losses and the curriculum
// switch from easy to mixed negatives at 50% of training.
inline TrainResult ssl_pretrain(Model& model, const std::vector<ClipSample>& train_clips,
                                const std::vector<ClipSample>& val_clips, const TrainConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = model.cfg();
  if (!model.has_sync_heads()) throw std::invalid_argument("ssl_pretrain: model has no AVS heads");
  if (train_clips.size() < 2) throw std::invalid_argument("ssl_pretrain: need at least 2 clips");
  const Rng root(cfg.seed);
  TrainResult out;
  std::ostringstream csv, events;
  csv << "iter,task,loss,lr,dropped_frac\n";

  for (int64_t n = 0; n < cfg.max_iters; ++n) {
    const Rng iter_rng = root.fork("iter", static_cast<uint64_t>(n));
    Rng batch_rng = iter_rng.fork("batch");
    Rng offset_rng = iter_rng.fork("offset");
    Rng drop_rng = iter_rng.fork("drop");
    Rng rot_rng = iter_rng.fork("rot");

    std::vector<ClipWindow> windows;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
      const size_t ci = static_cast<size_t>(batch_rng.uniform_int(0, static_cast<int64_t>(train_clips.size()) - 1));
      windows.push_back({ci, anchored_offset(mc, train_clips[ci], offset_rng)});
    }
    std::vector<double> keep = detail::draw_keep_mask(model, cfg.drop_pathway, drop_rng, cfg.batch_size);
    BatchInputs in = assemble_batch(mc, train_clips, windows);
    in.audio_keep = keep;
    ForwardResult res = model.forward(in, Mode::train, iter_rng);

    const double phase = static_cast<double>(n) / static_cast<double>(cfg.max_iters);
    Rng pair_rng = iter_rng.fork("pairs");
    PairBatch pb = build_pair_batch(mc, train_clips, windows, phase, pair_rng);
    std::vector<double> weights(pb.pairs.size(), 1.0);
    for (size_t i = 0; i < pb.pairs.size(); ++i)
      weights[i] = keep[pb.pairs[i].visual_slot] * keep[pb.pairs[i].audio_slot];
    Tensor loss_avs = avs_loss(model, res.sync_visual, pb, Mode::train, weights);

    // Rotation: shared quarter-turn per clip, visual pathways only.
    std::vector<int64_t> rot_ks;
    std::vector<Tensor> rot_slow, rot_fast;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
      const int64_t k = rot_rng.uniform_int(0, 3);
      rot_ks.push_back(k);
      const ClipWindow& w = windows[static_cast<size_t>(i)];
      Tensor sl = sample_frames(train_clips[w.clip_index].video, w.frame_offset, mc.tau, mc.T);
      rot_slow.push_back(k ? rotate90(sl, static_cast<int>(k)) : sl);
      if (mc.with_fast) {
        Tensor fs = sample_frames(train_clips[w.clip_index].video, w.frame_offset, mc.tau / mc.alpha_f,
                                  mc.fast_frames());
        rot_fast.push_back(k ? rotate90(fs, static_cast<int>(k)) : fs);
      }
    }
    BatchInputs rot_in;
    rot_in.slow = stack_batch(rot_slow);
    if (mc.with_fast) rot_in.fast = stack_batch(rot_fast);
    ForwardResult rot_res = model.forward(rot_in, Mode::train, iter_rng.fork("rotfwd"));
    Tensor pooled = rot_res.pooled_slow;
    if (mc.with_fast) pooled = concat_channels({pooled, rot_res.pooled_fast});
    Tensor loss_rot = rot_loss(model.rot_logits(pooled), rot_ks);

    model.zero_grad();
    backward(add(loss_avs, loss_rot));
    const double lr = lr_at(n, cfg);
    sgd_step(model, out.state.sgd, lr, cfg.momentum, cfg.weight_decay);
    out.state.iteration = n + 1;

    double dropped = 0.0;
    for (double k : keep) dropped += 1.0 - k;
    dropped /= static_cast<double>(keep.size());
    csv << n << ",avs," << detail::fmt_double(loss_avs.item()) << ',' << detail::fmt_double(lr) << ','
        << detail::fmt_double(dropped) << '\n';
    csv << n << ",rot," << detail::fmt_double(loss_rot.item()) << ',' << detail::fmt_double(lr) << ','
        << detail::fmt_double(dropped) << '\n';

    if (cfg.eval_every > 0 && (n + 1) % cfg.eval_every == 0 && val_clips.size() >= 2) {
      const double acc = evaluate_sync(model, val_clips, cfg.seed);
      events << "{\"iter\":" << (n + 1) << ",\"sync_acc\":" << detail::fmt_double(acc) << "}\n";
    }
  }
  if (val_clips.size() >= 2) {
    out.final_sync_acc = evaluate_sync(model, val_clips, cfg.seed);
    events << "{\"iter\":" << cfg.max_iters << ",\"sync_acc\":" << detail::fmt_double(out.final_sync_acc)
           << ",\"final\":true}\n";
  }
  out.logs.metrics_csv = csv.str();
  out.logs.events_jsonl = events.str();
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe on a frozen backbone.
// ---------------------------------------------------------------------------

inline uint64_t params_checksum(const Model& model) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : model.params()) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p.data());
    for (int64_t i = 0; i < p.size() * 8; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

struct ProbeConfig {
  int64_t iters = 400;
  double lr = 0.2;
  double momentum = 0.9;
  uint64_t seed = 0;
  int64_t calibration_batch = 16;
};

struct ProbeResult {
  double val_acc = 0.0;
  double train_acc = 0.0;
};

// Trains only a fresh fully-connected layer on pooled backbone features.
// Backbone parameters are frozen and checksummed before/after.
inline ProbeResult linear_probe(Model& model, const std::vector<ClipSample>& train_clips,
                                const std::vector<ClipSample>& val_clips, const ProbeConfig& pc = {}) {
  if (train_clips.empty() || val_clips.empty()) throw std::invalid_argument("linear_probe: empty dataset");
  const ModelConfig& mc = model.cfg();
  const uint64_t sum_before = params_checksum(model);
  model.set_backbone_frozen(true);
  const Rng root(pc.seed);

  // One calibration pass records BN statistics (buffers, not parameters),
  // which makes probing usable on a randomly initialized backbone.
  for (size_t start = 0; start < train_clips.size(); start += static_cast<size_t>(pc.calibration_batch)) {
    std::vector<ClipWindow> windows;
    for (size_t i = start; i < std::min(train_clips.size(), start + static_cast<size_t>(pc.calibration_batch)); ++i)
      windows.push_back({i, max_frame_offset(mc, train_clips[i]) / 2});
    BatchInputs in = assemble_batch(mc, train_clips, windows);
    model.forward(in, Mode::train, root.fork("calib", start));
  }

  auto extract = [&](const std::vector<ClipSample>& clips) {
    std::vector<Tensor> feats;
    std::vector<int64_t> labels;
    for (size_t start = 0; start < clips.size(); start += 32) {
      std::vector<ClipWindow> windows;
      for (size_t i = start; i < std::min(clips.size(), start + 32); ++i) {
        windows.push_back({i, max_frame_offset(mc, clips[i]) / 2});
        labels.push_back(clips[i].label);
      }
      BatchInputs in = assemble_batch(mc, clips, windows);
      ForwardResult res = model.forward(in, Mode::eval, root.fork("feat", start));
      Tensor f = res.pooled_slow;
      if (!f.defined()) f = res.pooled_audio;
      else if (mc.with_fast) f = concat_channels({f, res.pooled_fast});
      if (mc.with_visual && mc.with_audio) f = concat_channels({f, res.pooled_audio});
      feats.push_back(f.detach());
    }
    std::vector<Tensor> rows;
    for (Tensor& f : feats)
      for (int64_t i = 0; i < f.dim(0); ++i)
        rows.push_back(Tensor::from({f.dim(1)}, std::vector<double>(f.data() + i * f.dim(1),
                                                                    f.data() + (i + 1) * f.dim(1))));
    return std::make_pair(stack_batch(rows), labels);
  };
  auto [train_x, train_y] = extract(train_clips);
  auto [val_x, val_y] = extract(val_clips);

  const int64_t D = train_x.dim(1), K = mc.num_classes;
  Tensor w = Tensor::zeros({K, D}, true);
  Tensor b = Tensor::zeros({K}, true);
  std::vector<double> vw(static_cast<size_t>(w.size()), 0.0), vb(static_cast<size_t>(b.size()), 0.0);
  for (int64_t it = 0; it < pc.iters; ++it) {
    Tensor logits = fully_connected(train_x, w, b);
    Tensor loss = softmax_cross_entropy(logits, train_y);
    w.zero_grad();
    b.zero_grad();
    backward(loss);
    const double lr = pc.lr * 0.5 * (std::cos(M_PI * static_cast<double>(it) / static_cast<double>(pc.iters)) + 1.0);
    for (int64_t i = 0; i < w.size(); ++i) {
      vw[static_cast<size_t>(i)] = pc.momentum * vw[static_cast<size_t>(i)] + w.grad()[static_cast<size_t>(i)];
      w.data()[i] -= lr * vw[static_cast<size_t>(i)];
    }
    for (int64_t i = 0; i < b.size(); ++i) {
      vb[static_cast<size_t>(i)] = pc.momentum * vb[static_cast<size_t>(i)] + b.grad()[static_cast<size_t>(i)];
      b.data()[i] -= lr * vb[static_cast<size_t>(i)];
    }
  }

  auto accuracy = [&](const Tensor& x, const std::vector<int64_t>& y) {
    Tensor logits = fully_connected(x, w, b);
    int64_t correct = 0;
    for (int64_t i = 0; i < x.dim(0); ++i)
      if (argmax(logits.data() + i * K, K) == y[static_cast<size_t>(i)]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(x.dim(0));
  };
  ProbeResult res;
  res.train_acc = accuracy(train_x, train_y);
  res.val_acc = accuracy(val_x, val_y);

  model.set_backbone_frozen(false);
  const uint64_t sum_after = params_checksum(model);
  if (sum_before != sum_after)
    throw std::runtime_error("linear_probe: backbone parameters changed during probing");
  return res;
}

}  // namespace avsf
