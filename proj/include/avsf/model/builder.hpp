#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "avsf/core/ops.hpp"
#include "avsf/core/rng.hpp"
#include "avsf/core/tensor.hpp"
#include "avsf/model/config.hpp"

namespace avsf {

using Ext3 = std::array<int64_t, 3>;  // (T,H,W) for visual, (1,F,T) for audio

// Geometry and cost record for one layer. FLOPs are multiply-adds of
// convolutions and fully-connected layers for a single clip; BN, ReLU and
// pooling cost nothing under this convention.
struct LayerDesc {
  std::string name;
  std::string pathway;  // slow | fast | audio | fusion | head
  std::string stage;    // conv1 | pool1 | res2..res5 | head
  enum Kind { conv, pool, fc } kind = conv;
  int64_t in_ch = 0, out_ch = 0;
  Ext3 kernel{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0};
  Ext3 in_sz{1, 1, 1}, out_sz{1, 1, 1};
  bool bn = true, bias = false;
  bool inference = true;  // auxiliary training-only heads carry no inference FLOPs

  int64_t flops() const {
    if (kind == pool) return 0;
    return in_ch * out_ch * kernel[0] * kernel[1] * kernel[2] * out_sz[0] * out_sz[1] * out_sz[2];
  }
  int64_t params() const {
    if (kind == pool) return 0;
    int64_t p = in_ch * out_ch * kernel[0] * kernel[1] * kernel[2];
    if (bias) p += out_ch;
    if (bn) p += 2 * out_ch;
    return p;
  }
};

struct ConvUnit {
  LayerDesc desc;
  Tensor w, gamma, beta;
  std::shared_ptr<BnState> bn;

  Tensor fwd(const Tensor& x, Mode mode) const {
    Tensor y = conv3d(x, w, {desc.stride[0], desc.stride[1], desc.stride[2]},
                      {desc.pad[0], desc.pad[1], desc.pad[2]});
    if (bn) y = batch_norm(y, gamma, beta, *bn, mode);
    return y;
  }
};

// Standard bottleneck: 1x1 -> center -> 1x1 with identity or projected
// shortcut. Audio res2/res3 carry a factorized [3x1, 1x3] center pair.
struct Bottleneck {
  ConvUnit a, b1;
  std::optional<ConvUnit> b2;
  ConvUnit c;
  std::optional<ConvUnit> shortcut;

  Tensor fwd(const Tensor& x, Mode mode) const {
    Tensor h = relu(a.fwd(x, mode));
    h = relu(b1.fwd(h, mode));
    if (b2) h = relu(b2->fwd(h, mode));
    h = c.fwd(h, mode);
    Tensor sc = shortcut ? shortcut->fwd(x, mode) : x;
    return relu(add(h, sc));
  }
};

struct Pathway {
  std::vector<ConvUnit> stem;
  bool has_pool = false;
  LayerDesc pool_desc;
  std::vector<std::vector<Bottleneck>> stages;  // res2..res5
  std::vector<int64_t> stage_out_ch;            // conv1 width then res2..res5 widths

  Tensor stem_fwd(const Tensor& x, Mode mode) const {
    Tensor h = x;
    for (const ConvUnit& u : stem) h = relu(u.fwd(h, mode));
    if (has_pool)
      h = max_pool3d(h, {pool_desc.kernel[0], pool_desc.kernel[1], pool_desc.kernel[2]},
                     {pool_desc.stride[0], pool_desc.stride[1], pool_desc.stride[2]},
                     {pool_desc.pad[0], pool_desc.pad[1], pool_desc.pad[2]});
    return h;
  }
};

struct AvLateral {  // audio -> visual summand: tile, temporal conv, 1x1 project
  ConvUnit tconv, proj;
  int64_t repeat = 1;  // temporal upsample before the strided conv
};

struct AvNonlocal {
  Tensor wq;  // audio query projection [Ci, Ca]
  LayerDesc q_desc;
  ConvUnit theta, g;
  Tensor wo;  // output projection [Cv, Ci]
  LayerDesc o_desc;
  Tensor o_gamma, o_beta;
  std::shared_ptr<BnState> o_bn;
};

struct HeadBlock {
  std::string pathway;
  int64_t width = 0;
  Tensor w;  // [K, width]
  LayerDesc desc;
};

struct SyncHead {
  Tensor w1, b1, w2, b2;
  LayerDesc d1, d2;
};

struct BatchInputs {
  Tensor slow;                     // [N,3,T,S,S]
  Tensor fast;                     // [N,3,T*alpha_f,S,S]
  Tensor audio;                    // [N,1,F,T_a]
  std::vector<double> audio_keep;  // per-clip DropPathway mask; empty = keep all
};

struct ForwardResult {
  Tensor logits;
  Tensor pooled_slow, pooled_fast, pooled_audio;  // GAP features, pre-dropout
  std::map<std::string, Tensor> sync_visual;      // pooled visual per AVS stage
  std::map<std::string, Tensor> sync_audio;       // pooled audio per AVS stage
  std::map<std::string, Ext3> observed;           // "pathway/stage" -> output extents
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed, bool with_params = true)
      : cfg_(std::move(cfg)), with_params_(with_params) {
    cfg_.validate();
    init_rng_ = Rng(seed);
    build();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& cfg() const { return cfg_; }
  const std::vector<LayerDesc>& descs() const { return descs_; }
  const std::map<std::string, Ext3>& planned_extents() const { return planned_; }
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  std::vector<std::pair<std::string, std::shared_ptr<BnState>>>& bn_states() { return bn_states_; }
  const std::vector<std::pair<std::string, std::shared_ptr<BnState>>>& bn_states() const { return bn_states_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void set_backbone_frozen(bool frozen) {
    for (auto& [name, p] : params_) p.set_requires_grad(!frozen);
  }

  int64_t head_width() const {
    int64_t w = 0;
    for (const HeadBlock& b : head_blocks_) w += b.width;
    return w;
  }

  const std::vector<HeadBlock>& head_blocks() const { return head_blocks_; }

  // Classification forward. Audio input may be left undefined to run the
  // visual pathways alone (used by the rotation task); fusion and the audio
  // head block then contribute nothing.
  ForwardResult forward(const BatchInputs& in, Mode mode, const Rng& iter_rng) const {
    require_params();
    ForwardResult res;
    const int64_t N = in.slow.defined() ? in.slow.dim(0) : in.audio.dim(0);
    std::vector<double> keep = in.audio_keep;
    if (keep.empty()) keep.assign(static_cast<size_t>(N), 1.0);
    if (static_cast<int64_t>(keep.size()) != N)
      throw std::invalid_argument("forward: audio_keep size " + std::to_string(keep.size()) +
                                  " does not match batch " + std::to_string(N));

    const bool use_audio = cfg_.with_audio && in.audio.defined();

    std::map<std::string, Tensor> audio_feats;
    if (use_audio) {
      check_input(in.audio, {N, 1, cfg_.F_mel, cfg_.T_a}, "audio");
      Tensor a = reshape(in.audio, {N, 1, 1, cfg_.F_mel, cfg_.T_a});
      a = audio_.stem_fwd(a, mode);
      record(res, "audio", "conv1", a);
      for (size_t si = 0; si < audio_.stages.size(); ++si) {
        for (const Bottleneck& b : audio_.stages[si]) a = b.fwd(a, mode);
        audio_feats[stage_name(si)] = a;
        record(res, "audio", stage_name(si), a);
      }
      res.pooled_audio = global_avg_pool(audio_feats.at("res5"));
      for (const std::string& st : cfg_.avs_stages) res.sync_audio[st] = global_avg_pool(audio_feats.at(st));
    }

    if (cfg_.with_visual) {
      check_input(in.slow, {N, 3, cfg_.T, cfg_.S, cfg_.S}, "slow");
      Tensor s = slow_.stem_fwd(in.slow, mode);
      record(res, "slow", "pool1", s);
      Tensor f;
      if (cfg_.with_fast) {
        check_input(in.fast, {N, 3, cfg_.fast_frames(), cfg_.S, cfg_.S}, "fast");
        f = fast_.stem_fwd(in.fast, mode);
        record(res, "fast", "pool1", f);
      }

      s = fuse_boundary(res, 0, "pool1", s, f, audio_feats, keep, mode);
      for (size_t si = 0; si < slow_.stages.size(); ++si) {
        const std::string stage = stage_name(si);
        for (const Bottleneck& b : slow_.stages[si]) s = b.fwd(s, mode);
        record(res, "slow", stage, s);
        if (cfg_.with_fast) {
          for (const Bottleneck& b : fast_.stages[si]) f = b.fwd(f, mode);
          record(res, "fast", stage, f);
        }
        if (stage != "res5") s = fuse_boundary(res, si + 1, stage, s, f, audio_feats, keep, mode);
      }
      res.pooled_slow = global_avg_pool(s);
      if (cfg_.with_fast) res.pooled_fast = global_avg_pool(f);
      if (cfg_.avs_stages.count("res5")) {
        Tensor v5 = res.pooled_slow;
        if (cfg_.with_fast) v5 = concat_channels({v5, res.pooled_fast});
        res.sync_visual["res5"] = v5;
      }
    }

    // Head: per-pathway dropout, concat by summed per-block fc.
    std::vector<Tensor> feats;
    for (const HeadBlock& b : head_blocks_) {
      Tensor v;
      if (b.pathway == "slow") v = res.pooled_slow;
      else if (b.pathway == "fast") v = res.pooled_fast;
      else v = use_audio ? scale_rows(res.pooled_audio, keep) : Tensor::zeros({N, b.width});
      Rng dr = iter_rng.fork("dropout." + b.pathway);
      feats.push_back(dropout(v, cfg_.dropout_rate, dr, mode));
    }
    Tensor logits;
    for (size_t i = 0; i < head_blocks_.size(); ++i) {
      Tensor part = fully_connected(feats[i], head_blocks_[i].w, i == 0 ? head_bias_ : zero_bias(cfg_.num_classes));
      logits = i == 0 ? part : add(logits, part);
    }
    res.logits = logits;
    return res;
  }

  Tensor sync_logit(const std::string& stage, const Tensor& vis_vec, const Tensor& audio_vec) const {
    require_params();
    auto it = sync_heads_.find(stage);
    if (it == sync_heads_.end())
      throw std::invalid_argument("sync_logit: no sync head at stage '" + stage + "'");
    const SyncHead& h = it->second;
    Tensor x = concat_channels({vis_vec, audio_vec});
    Tensor hidden = relu(fully_connected(x, h.w1, h.b1));
    return fully_connected(hidden, h.w2, h.b2);
  }

  // Audio-pathway-only forward, pooled per requested stage. Used by the
  // synchronization task on displaced audio windows.
  std::map<std::string, Tensor> audio_stage_features(const Tensor& audio, Mode mode,
                                                     const std::set<std::string>& stages) const {
    require_params();
    if (!cfg_.with_audio) throw std::invalid_argument("audio_stage_features: audio pathway disabled");
    const int64_t N = audio.dim(0);
    check_input(audio, {N, 1, cfg_.F_mel, cfg_.T_a}, "audio");
    Tensor a = reshape(audio, {N, 1, 1, cfg_.F_mel, cfg_.T_a});
    a = audio_.stem_fwd(a, mode);
    std::map<std::string, Tensor> out;
    for (size_t si = 0; si < audio_.stages.size(); ++si) {
      for (const Bottleneck& b : audio_.stages[si]) a = b.fwd(a, mode);
      if (stages.count(stage_name(si))) out[stage_name(si)] = global_avg_pool(a);
    }
    return out;
  }

  Tensor rot_logits(const Tensor& pooled_visual) const {
    require_params();
    if (!rot_w_.defined()) throw std::invalid_argument("rot_logits: model built without rotation head");
    return fully_connected(pooled_visual, rot_w_, rot_b_);
  }

  bool has_sync_heads() const { return !sync_heads_.empty(); }
  int64_t audio_stage_width(const std::string& stage) const {
    const size_t si = stage == "res2" ? 0 : stage == "res3" ? 1 : stage == "res4" ? 2 : 3;
    return audio_.stage_out_ch[si + 1];
  }

 private:
  static std::string stage_name(size_t si) {
    static const char* names[] = {"res2", "res3", "res4", "res5"};
    return names[si];
  }

  void require_params() const {
    if (!with_params_) throw std::runtime_error("model was built for shape/FLOPs analysis only");
  }

  static void check_input(const Tensor& t, const Shape& want, const char* port) {
    if (!t.defined()) throw std::invalid_argument(std::string("forward: missing ") + port + " input");
    if (t.shape() != want)
      throw std::invalid_argument(std::string("forward: ") + port + " input " + shape_str(t.shape()) +
                                  ", expected " + shape_str(want));
  }

  void record(ForwardResult& res, const std::string& pathway, const std::string& stage, const Tensor& t) const {
    Ext3 e{1, 1, 1};
    if (t.rank() == 5) e = {t.dim(2), t.dim(3), t.dim(4)};
    res.observed[pathway + "/" + stage] = e;
  }

  Tensor zero_bias(int64_t n) const {
    auto it = zero_bias_.find(n);
    if (it != zero_bias_.end()) return it->second;
    return zero_bias_.emplace(n, Tensor::zeros({n})).first->second;
  }

  // One pathway boundary: Slow<-Fast temporal-strided lateral (concat), then
  // the configured audio fusion into the concatenated features.
  Tensor fuse_boundary(ForwardResult& res, size_t bi, const std::string& stage, Tensor s, const Tensor& f,
                       const std::map<std::string, Tensor>& audio_feats, const std::vector<double>& keep,
                       Mode mode) const {
    const bool av_here = cfg_.fusion_stages.count(stage) > 0 && audio_feats.count(stage) > 0;
    Tensor fused = s;
    if (cfg_.with_fast) {
      Tensor fin = f;
      if (av_here && cfg_.fusion_kind == FusionKind::AtoFtoS) {
        const Tensor& a = audio_feats.at(stage);
        Tensor summand = av_summand(av_lat_.at(stage), a, f.dim(2), f.dim(3), f.dim(4), mode);
        fin = add(f, scale_rows(summand, keep));
      }
      Tensor lat = relu(sf_lat_[bi].fwd(fin, mode));
      fused = concat_channels({s, lat});
    }
    if (stage != "pool1" && cfg_.avs_stages.count(stage)) res.sync_visual[stage] = global_avg_pool(fused);
    if (!av_here || cfg_.fusion_kind == FusionKind::AtoFtoS) return fused;

    const Tensor& a = audio_feats.at(stage);
    if (cfg_.fusion_kind == FusionKind::AVNonlocal) return av_nonlocal_fuse(av_nl_.at(stage), a, fused, keep, mode);
    Tensor summand = av_summand(av_lat_.at(stage), a, fused.dim(2), fused.dim(3), fused.dim(4), mode);
    return add(fused, scale_rows(summand, keep));
  }

  // Freq-pool the audio map, tile it across the target grid, then resample in
  // time (strided conv) and project channels. The summand is materialized at
  // the visual resolution, which is also how its cost is counted.
  Tensor av_summand(const AvLateral& lat, const Tensor& a, int64_t T_out, int64_t H, int64_t W, Mode mode) const {
    const int64_t N = a.dim(0), C = a.dim(1);
    Tensor pooled = mean_axis(reshape(a, {N, C, a.dim(3), a.dim(4)}), 2);  // [N,C,Ta]
    if (lat.repeat > 1) pooled = repeat_temporal(pooled, lat.repeat);
    Tensor tiled = tile_spatial(pooled, H, W);
    Tensor h = relu(lat.tconv.fwd(tiled, mode));
    if (h.dim(2) != T_out)
      throw std::invalid_argument("fusion: resampled audio length " + std::to_string(h.dim(2)) +
                                  " does not match target " + std::to_string(T_out));
    return lat.proj.fwd(h, mode);
  }

  Tensor av_nonlocal_fuse(const AvNonlocal& nl, const Tensor& a, const Tensor& vis,
                          const std::vector<double>& keep, Mode mode) const {
    const int64_t N = vis.dim(0), Cv = vis.dim(1);
    const int64_t Ci = nl.q_desc.out_ch;
    const int64_t P = vis.dim(2) * vis.dim(3) * vis.dim(4);
    Tensor q = fully_connected(global_avg_pool(a), nl.wq, zero_bias(Ci));
    Tensor k = reshape(nl.theta.fwd(vis, mode), {N, Ci, P});
    Tensor v = reshape(nl.g.fwd(vis, mode), {N, Ci, P});
    Tensor att = attend_global(q, k, v);
    Tensor out = fully_connected(att, nl.wo, zero_bias(Cv));
    out = batch_norm(out, nl.o_gamma, nl.o_beta, *nl.o_bn, mode);
    Tensor summand = broadcast_feature(out, vis.dim(2), vis.dim(3), vis.dim(4));
    return add(vis, scale_rows(summand, keep));
  }

  // ------------------------------------------------------------------
  // Construction.
  // ------------------------------------------------------------------

  Tensor new_param(const std::string& name, Shape shape, double stddev) {
    Tensor t = Tensor::zeros(shape, true);
    if (with_params_ && stddev > 0) {
      Rng r = init_rng_.fork("param:" + name);
      for (double& v : t.values()) v = r.normal(0.0, stddev);
    }
    params_.emplace_back(name, t);
    return t;
  }

  Tensor new_const_param(const std::string& name, Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value, true);
    params_.emplace_back(name, t);
    return t;
  }

  ConvUnit make_conv(const std::string& name, const std::string& pathway, const std::string& stage,
                     int64_t in_ch, int64_t out_ch, Ext3 kernel, Ext3 stride, Ext3 pad, const Ext3& in_sz,
                     bool with_bn = true, double bn_gamma_init = 1.0) {
    LayerDesc d;
    d.name = name;
    d.pathway = pathway;
    d.stage = stage;
    d.kind = LayerDesc::conv;
    d.in_ch = in_ch;
    d.out_ch = out_ch;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = pad;
    d.in_sz = in_sz;
    for (int i = 0; i < 3; ++i)
      d.out_sz[i] = detail::out_extent(in_sz[i], kernel[i], stride[i], pad[i], name.c_str(),
                                       i == 0 ? "t" : (i == 1 ? "h" : "w"));
    d.bn = with_bn;
    descs_.push_back(d);

    ConvUnit u;
    u.desc = d;
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kernel[0] * kernel[1] * kernel[2]));
    u.w = new_param(name + ".w", {out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, stddev);
    if (with_bn) {
      u.gamma = new_const_param(name + ".bn.gamma", {out_ch}, bn_gamma_init);
      u.beta = new_const_param(name + ".bn.beta", {out_ch}, 0.0);
      u.bn = std::make_shared<BnState>(out_ch);
      bn_states_.emplace_back(name + ".bn", u.bn);
    }
    return u;
  }

  Tensor make_fc(const std::string& name, const std::string& pathway, const std::string& stage, int64_t in_ch,
                 int64_t out_ch, double stddev, bool bias, bool inference, LayerDesc* out_desc) {
    LayerDesc d;
    d.name = name;
    d.pathway = pathway;
    d.stage = stage;
    d.kind = LayerDesc::fc;
    d.in_ch = in_ch;
    d.out_ch = out_ch;
    d.bn = false;
    d.bias = bias;
    d.inference = inference;
    descs_.push_back(d);
    if (out_desc) *out_desc = d;
    return new_param(name + ".w", {out_ch, in_ch}, stddev);
  }

  struct VisualSpec {
    const char* name;
    int64_t conv1_width;
    int64_t conv1_kt;
    std::array<int64_t, 4> inner, out;
    std::array<int64_t, 4> kt;  // temporal kernel of the first 1x1 per stage
  };

  Pathway build_visual(const VisualSpec& vs, Ext3 in_sz) {
    Pathway p;
    const std::string pw = vs.name;
    ConvUnit c1 = make_conv(pw + ".conv1", pw, "conv1", 3, vs.conv1_width, {vs.conv1_kt, 7, 7}, {1, 2, 2},
                            {(vs.conv1_kt - 1) / 2, 3, 3}, in_sz);
    Ext3 cur = c1.desc.out_sz;
    planned_[pw + "/conv1"] = cur;
    p.stem.push_back(std::move(c1));

    LayerDesc pd;
    pd.name = pw + ".pool1";
    pd.pathway = pw;
    pd.stage = "pool1";
    pd.kind = LayerDesc::pool;
    pd.in_ch = pd.out_ch = vs.conv1_width;
    pd.kernel = {1, 3, 3};
    pd.stride = {1, 2, 2};
    pd.pad = {0, 1, 1};
    pd.in_sz = cur;
    for (int i = 0; i < 3; ++i)
      pd.out_sz[i] = detail::out_extent(cur[i], pd.kernel[i], pd.stride[i], pd.pad[i], "pool1", "thw");
    descs_.push_back(pd);
    p.has_pool = true;
    p.pool_desc = pd;
    cur = pd.out_sz;
    planned_[pw + "/pool1"] = cur;

    p.stage_out_ch.push_back(vs.conv1_width);
    int64_t in_ch = vs.conv1_width;
    if (pw == "slow" && cfg_.with_fast) in_ch += 2 * fast_stage_ch_[0];  // pool1 lateral concat
    for (size_t si = 0; si < 4; ++si) {
      const std::string stage = stage_name(si);
      const bool spatial_stride = si > 0;  // visual res2 keeps pool1 resolution
      std::vector<Bottleneck> blocks;
      for (int64_t b = 0; b < cfg_.depths[si]; ++b) {
        const std::string scope = pw + "." + stage + ".b" + std::to_string(b);
        const int64_t stride = (b == 0 && spatial_stride) ? 2 : 1;
        Bottleneck blk;
        blk.a = make_conv(scope + ".a", pw, stage, in_ch, vs.inner[si], {vs.kt[si], 1, 1}, {1, 1, 1},
                          {(vs.kt[si] - 1) / 2, 0, 0}, cur);
        blk.b1 = make_conv(scope + ".b", pw, stage, vs.inner[si], vs.inner[si], {1, 3, 3},
                           {1, stride, stride}, {0, 1, 1}, blk.a.desc.out_sz);
        blk.c = make_conv(scope + ".c", pw, stage, vs.inner[si], vs.out[si], {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                          blk.b1.desc.out_sz);
        if (b == 0 && (in_ch != vs.out[si] || stride != 1))
          blk.shortcut = make_conv(scope + ".sc", pw, stage, in_ch, vs.out[si], {1, 1, 1},
                                   {1, stride, stride}, {0, 0, 0}, cur);
        cur = blk.c.desc.out_sz;
        in_ch = vs.out[si];
        blocks.push_back(std::move(blk));
      }
      p.stages.push_back(std::move(blocks));
      p.stage_out_ch.push_back(vs.out[si]);
      planned_[pw + "/" + stage] = cur;
      // The lateral concat widens the Slow input before the next stage.
      if (pw == "slow" && cfg_.with_fast && si < 3) in_ch += 2 * fast_stage_ch_[si + 1];
    }
    return p;
  }

  Pathway build_audio(Ext3 in_sz) {
    Pathway p;
    const int64_t w1 = cfg_.audio_width(64);
    ConvUnit sa = make_conv("audio.conv1a", "audio", "conv1", 1, w1, {1, 9, 1}, {1, 1, 1}, {0, 4, 0}, in_sz);
    ConvUnit sb =
        make_conv("audio.conv1b", "audio", "conv1", w1, w1, {1, 1, 9}, {1, 1, 1}, {0, 0, 4}, sa.desc.out_sz);
    Ext3 cur = sb.desc.out_sz;
    planned_["audio/conv1"] = cur;
    p.stem.push_back(std::move(sa));
    p.stem.push_back(std::move(sb));
    p.stage_out_ch.push_back(w1);

    static const int64_t inner_base[4] = {64, 128, 256, 512};
    static const int64_t out_base[4] = {256, 512, 1024, 2048};
    int64_t in_ch = w1;
    for (size_t si = 0; si < 4; ++si) {
      const std::string stage = stage_name(si);
      const int64_t inner = cfg_.audio_width(inner_base[si]);
      const int64_t out = cfg_.audio_width(out_base[si]);
      const bool factorized = si < 2;  // [3x1, 1x3] pairs in res2/res3
      std::vector<Bottleneck> blocks;
      for (int64_t b = 0; b < cfg_.depths[si]; ++b) {
        const std::string scope = "audio." + stage + ".b" + std::to_string(b);
        const int64_t stride = b == 0 ? 2 : 1;  // every audio stage downsamples
        Bottleneck blk;
        blk.a = make_conv(scope + ".a", "audio", stage, in_ch, inner, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, cur);
        if (factorized) {
          blk.b1 = make_conv(scope + ".bf", "audio", stage, inner, inner, {1, 3, 1}, {1, stride, 1},
                             {0, 1, 0}, blk.a.desc.out_sz);
          blk.b2 = make_conv(scope + ".bt", "audio", stage, inner, inner, {1, 1, 3}, {1, 1, stride},
                             {0, 0, 1}, blk.b1.desc.out_sz);
        } else {
          blk.b1 = make_conv(scope + ".b", "audio", stage, inner, inner, {1, 3, 3}, {1, stride, stride},
                             {0, 1, 1}, blk.a.desc.out_sz);
        }
        const Ext3 center_out = blk.b2 ? blk.b2->desc.out_sz : blk.b1.desc.out_sz;
        blk.c = make_conv(scope + ".c", "audio", stage, inner, out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                          center_out);
        if (b == 0)
          blk.shortcut = make_conv(scope + ".sc", "audio", stage, in_ch, out, {1, 1, 1},
                                   {1, stride, stride}, {0, 0, 0}, cur);
        cur = blk.c.desc.out_sz;
        in_ch = out;
        blocks.push_back(std::move(blk));
      }
      p.stages.push_back(std::move(blocks));
      p.stage_out_ch.push_back(out);
      planned_["audio/" + stage] = cur;
    }
    return p;
  }

  void build() {
    static const int64_t inner_base[4] = {64, 128, 256, 512};
    static const int64_t out_base[4] = {256, 512, 1024, 2048};

    if (cfg_.with_visual) {
      fast_stage_ch_[0] = cfg_.fast_width(64);
      for (int i = 0; i < 4; ++i) fast_stage_ch_[i + 1] = cfg_.fast_width(out_base[i]);

      VisualSpec fast_spec{"fast",
                           cfg_.fast_width(64),
                           5,
                           {cfg_.fast_width(inner_base[0]), cfg_.fast_width(inner_base[1]),
                            cfg_.fast_width(inner_base[2]), cfg_.fast_width(inner_base[3])},
                           {cfg_.fast_width(out_base[0]), cfg_.fast_width(out_base[1]),
                            cfg_.fast_width(out_base[2]), cfg_.fast_width(out_base[3])},
                           {3, 3, 3, 3}};
      VisualSpec slow_spec{"slow",
                           cfg_.slow_width(64),
                           1,
                           {cfg_.slow_width(inner_base[0]), cfg_.slow_width(inner_base[1]),
                            cfg_.slow_width(inner_base[2]), cfg_.slow_width(inner_base[3])},
                           {cfg_.slow_width(out_base[0]), cfg_.slow_width(out_base[1]),
                            cfg_.slow_width(out_base[2]), cfg_.slow_width(out_base[3])},
                           {1, 1, 3, 3}};
      if (cfg_.with_fast) fast_ = build_visual(fast_spec, {cfg_.fast_frames(), cfg_.S, cfg_.S});
      slow_ = build_visual(slow_spec, {cfg_.T, cfg_.S, cfg_.S});
    }
    if (cfg_.with_audio) audio_ = build_audio({1, cfg_.F_mel, cfg_.T_a});

    // Slow<-Fast laterals at pool1 and res2..res4 boundaries.
    if (cfg_.with_visual && cfg_.with_fast) {
      static const char* boundary[4] = {"pool1", "res2", "res3", "res4"};
      for (int bi = 0; bi < 4; ++bi) {
        const int64_t cf = fast_stage_ch_[bi];
        const Ext3 fx = planned_.at(std::string("fast/") + boundary[bi]);
        sf_lat_.push_back(make_conv(std::string("fusion.sf.") + boundary[bi], "fusion", boundary[bi], cf,
                                    2 * cf, {5, 1, 1}, {cfg_.alpha_f, 1, 1}, {2, 0, 0}, fx));
      }
    }

    // Audio->visual laterals.
    if (cfg_.with_visual && cfg_.with_audio) {
      for (const std::string& stage : cfg_.fusion_stages) {
        if (stage == "pool5") continue;
        const size_t si = stage == "res2" ? 0 : stage == "res3" ? 1 : 2;
        const int64_t ca = audio_.stage_out_ch[si + 1];
        const Ext3 ax = planned_.at("audio/" + stage);
        const Ext3 vx = planned_.at("slow/" + stage);
        const int64_t cv_fused =
            slow_.stage_out_ch[si + 1] + (cfg_.with_fast ? 2 * fast_stage_ch_[si + 1] : 0);
        if (cfg_.fusion_kind == FusionKind::AVNonlocal) {
          AvNonlocal nl;
          const int64_t ci = ca;
          nl.wq = make_fc("fusion.nl." + stage + ".q", "fusion", stage, ca, ci,
                          std::sqrt(1.0 / static_cast<double>(ca)), false, true, &nl.q_desc);
          nl.theta = make_conv("fusion.nl." + stage + ".theta", "fusion", stage, cv_fused, ci, {1, 1, 1},
                               {1, 1, 1}, {0, 0, 0}, vx, false);
          nl.g = make_conv("fusion.nl." + stage + ".g", "fusion", stage, cv_fused, ci, {1, 1, 1}, {1, 1, 1},
                           {0, 0, 0}, vx, false);
          nl.wo = make_fc("fusion.nl." + stage + ".out", "fusion", stage, ci, cv_fused,
                          std::sqrt(1.0 / static_cast<double>(ci)), false, true, &nl.o_desc);
          descs_.back().bn = true;  // projection is followed by BN
          nl.o_desc.bn = true;
          // Zero-init residual: the block starts as the identity.
          nl.o_gamma = new_const_param("fusion.nl." + stage + ".bn.gamma", {cv_fused}, 0.0);
          nl.o_beta = new_const_param("fusion.nl." + stage + ".bn.beta", {cv_fused}, 0.0);
          nl.o_bn = std::make_shared<BnState>(cv_fused);
          bn_states_.emplace_back("fusion.nl." + stage + ".bn", nl.o_bn);
          av_nl_.emplace(stage, std::move(nl));
        } else {
          const bool to_fast = cfg_.fusion_kind == FusionKind::AtoFtoS;
          const int64_t t_target = to_fast ? cfg_.fast_frames() : cfg_.T;
          const int64_t c_target = to_fast ? fast_stage_ch_[si + 1] : cv_fused;
          const Ext3 gx = to_fast ? planned_.at("fast/" + stage) : vx;
          int64_t ta = ax[2];  // audio time extent at this stage
          AvLateral lat;
          if (ta < t_target) {
            if (t_target % ta != 0)
              throw ConfigError("model.fusion_stages",
                                "audio time length " + std::to_string(ta) + " at " + stage +
                                    " incompatible with target " + std::to_string(t_target));
            lat.repeat = t_target / ta;
            ta = t_target;
          } else if (ta % t_target != 0) {
            throw ConfigError("model.fusion_stages",
                              "audio time length " + std::to_string(ta) + " at " + stage +
                                  " is not a multiple of target " + std::to_string(t_target));
          }
          const int64_t stride = ta / t_target;
          lat.tconv = make_conv("fusion.av." + stage + ".tconv", "fusion", stage, ca, ca, {5, 1, 1},
                                {stride, 1, 1}, {2, 0, 0}, {ta, gx[1], gx[2]});
          lat.proj = make_conv("fusion.av." + stage + ".proj", "fusion", stage, ca, c_target, {1, 1, 1},
                               {1, 1, 1}, {0, 0, 0}, lat.tconv.desc.out_sz);
          av_lat_.emplace(stage, std::move(lat));
        }
      }
    }

    // Classifier head: one fc over the concatenated pooled pathways,
    // realized as per-pathway weight blocks so a pathway's slice is
    // independent of which other pathways exist.
    const int64_t K = cfg_.num_classes;
    auto add_head_block = [&](const std::string& pw, int64_t width, bool first) {
      HeadBlock b;
      b.pathway = pw;
      b.width = width;
      b.w = make_fc("head.fc." + pw, "head", "head", width, K, 0.01, first, true, &b.desc);
      head_blocks_.push_back(std::move(b));
    };
    if (cfg_.with_visual) {
      add_head_block("slow", slow_.stage_out_ch[4], true);
      if (cfg_.with_fast) add_head_block("fast", fast_stage_ch_[4], false);
      if (cfg_.head_audio()) add_head_block("audio", audio_.stage_out_ch[4], false);
    } else {
      add_head_block("audio", audio_.stage_out_ch[4], true);
    }
    head_bias_ = new_param("head.fc.bias", {K}, 0.0);

    // Auxiliary heads; training only, so they carry no inference FLOPs.
    for (const std::string& stage : cfg_.avs_stages) {
      const size_t si = stage == "res3" ? 1 : stage == "res4" ? 2 : 3;
      const int64_t ca = audio_.stage_out_ch[si + 1];
      int64_t cv;
      if (stage == "res5")
        cv = slow_.stage_out_ch[4] + (cfg_.with_fast ? fast_stage_ch_[4] : 0);
      else
        cv = slow_.stage_out_ch[si + 1] + (cfg_.with_fast ? 2 * fast_stage_ch_[si + 1] : 0);
      SyncHead h;
      h.w1 = make_fc("sync." + stage + ".fc1", "head", stage, cv + ca, ca,
                     std::sqrt(2.0 / static_cast<double>(cv + ca)), true, false, &h.d1);
      h.b1 = new_param("sync." + stage + ".fc1.b", {ca}, 0.0);
      h.w2 = make_fc("sync." + stage + ".fc2", "head", stage, ca, 1, 0.01, true, false, &h.d2);
      h.b2 = new_param("sync." + stage + ".fc2.b", {1}, 0.0);
      sync_heads_.emplace(stage, std::move(h));
    }
    if (cfg_.rot_head) {
      if (!cfg_.with_visual) throw ConfigError("model.rot_head", "rotation head needs the visual pathways");
      const int64_t cv = slow_.stage_out_ch[4] + (cfg_.with_fast ? fast_stage_ch_[4] : 0);
      rot_w_ = make_fc("rot.fc", "head", "head", cv, 4, 0.01, true, false, &rot_desc_);
      rot_b_ = new_param("rot.fc.b", {4}, 0.0);
    }
  }

  ModelConfig cfg_;
  bool with_params_;
  Rng init_rng_;
  Pathway slow_, fast_, audio_;
  std::array<int64_t, 5> fast_stage_ch_{0, 0, 0, 0, 0};  // conv1, res2..res5
  std::vector<ConvUnit> sf_lat_;
  std::map<std::string, AvLateral> av_lat_;
  std::map<std::string, AvNonlocal> av_nl_;
  std::vector<HeadBlock> head_blocks_;
  Tensor head_bias_;
  mutable std::map<int64_t, Tensor> zero_bias_;
  std::map<std::string, SyncHead> sync_heads_;
  Tensor rot_w_, rot_b_;
  LayerDesc rot_desc_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<BnState>>> bn_states_;
  std::vector<LayerDesc> descs_;
  std::map<std::string, Ext3> planned_;
};

}  // namespace avsf
