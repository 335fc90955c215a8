#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace avsf {

// Configuration error carrying the offending key, so the CLI can report it
// and exit with a distinct status.
struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string key_, const std::string& msg)
      : std::runtime_error("config key '" + key_ + "': " + msg), key(std::move(key_)) {}
};

enum class FusionKind { AtoFS, AtoFtoS, AVNonlocal };

inline const char* fusion_kind_name(FusionKind k) {
  switch (k) {
    case FusionKind::AtoFS: return "AtoFS";
    case FusionKind::AtoFtoS: return "AtoFtoS";
    case FusionKind::AVNonlocal: return "AVNonlocal";
  }
  return "?";
}

inline FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "AtoFS") return FusionKind::AtoFS;
  if (s == "AtoFtoS") return FusionKind::AtoFtoS;
  if (s == "AVNonlocal") return FusionKind::AVNonlocal;
  throw ConfigError("model.fusion_kind", "unknown fusion kind '" + s + "'");
}

// Every architecture hyperparameter of the three-pathway network plus the
// desk-scale width multiplier. Defaults are the R50 4x16 instantiation.
struct ModelConfig {
  int64_t T = 4;        // Slow pathway frames per clip
  int64_t tau = 16;     // Slow temporal stride on the raw clip
  int64_t alpha_f = 8;  // Fast speed ratio
  int64_t alpha_a = 32; // Audio speed ratio
  double beta_f = 1.0 / 8.0;  // Fast channel ratio
  double beta_a = 1.0 / 2.0;  // Audio channel ratio
  int64_t S = 224;            // square spatial crop (training)
  int64_t eval_spatial = 256; // spatial size used for FLOPs / inference reporting
  int64_t F_mel = 80;         // audio frequency bins
  int64_t T_a = 128;          // audio time frames
  FusionKind fusion_kind = FusionKind::AtoFS;
  std::set<std::string> fusion_stages = {"res3", "res4", "pool5"};
  std::set<std::string> avs_stages;
  double width_mult = 1.0;
  int64_t num_classes = 400;
  bool with_visual = true;
  bool with_fast = true;
  bool with_audio = true;
  bool rot_head = false;
  std::array<int64_t, 4> depths = {3, 4, 6, 3};  // res2..res5 block counts
  double dropout_rate = 0.5;

  int64_t raw_frames() const { return T * tau; }
  int64_t fast_frames() const { return T * alpha_f; }

  // Round half up with a floor of 4 channels.
  int64_t width(double base) const {
    int64_t w = static_cast<int64_t>(std::floor(base * width_mult + 0.5));
    return std::max<int64_t>(4, w);
  }
  int64_t slow_width(int64_t table_width) const { return width(static_cast<double>(table_width)); }
  int64_t fast_width(int64_t table_width) const { return width(static_cast<double>(table_width) * beta_f); }
  int64_t audio_width(int64_t table_width) const { return width(static_cast<double>(table_width) * beta_a); }

  bool head_audio() const { return with_audio && fusion_stages.count("pool5") > 0; }

  void validate() const {
    if (T < 1) throw ConfigError("model.T", "must be >= 1");
    if (tau < 1) throw ConfigError("model.tau", "must be >= 1");
    if (alpha_f <= 1) throw ConfigError("model.alpha_f", "speed ratio must be > 1");
    if (alpha_a < alpha_f) throw ConfigError("model.alpha_a", "audio speed ratio must be >= alpha_f");
    if (!(beta_f > 0.0 && beta_f < 1.0)) throw ConfigError("model.beta_f", "must be in (0,1)");
    if (!(beta_a > 0.0 && beta_a <= 1.0)) throw ConfigError("model.beta_a", "must be in (0,1]");
    if (S < 8) throw ConfigError("model.S", "spatial crop must be >= 8");
    if (eval_spatial < 8) throw ConfigError("model.eval_spatial", "must be >= 8");
    if (F_mel < 1) throw ConfigError("model.F_mel", "must be >= 1");
    if (T_a < 1) throw ConfigError("model.T_a", "must be >= 1");
    if (width_mult <= 0.0 || width_mult > 1.0) throw ConfigError("model.width_mult", "must be in (0,1]");
    if (num_classes < 2) throw ConfigError("model.num_classes", "must be >= 2");
    for (int64_t d : depths)
      if (d < 1) throw ConfigError("model.depths", "block counts must be >= 1");
    if (with_audio && T_a % fast_frames() != 0)
      throw ConfigError("model.T_a", "audio frames " + std::to_string(T_a) +
                                         " must be divisible by the Fast temporal length " +
                                         std::to_string(fast_frames()));
    for (const std::string& s : fusion_stages)
      if (s != "res2" && s != "res3" && s != "res4" && s != "pool5")
        throw ConfigError("model.fusion_stages",
                          "stage '" + s + "' has no audio features to fuse (allowed: res2,res3,res4,pool5)");
    for (const std::string& s : avs_stages)
      if (s != "res3" && s != "res4" && s != "res5")
        throw ConfigError("model.avs_stages", "stage '" + s + "' not in {res3,res4,res5}");
    if (!with_audio && !fusion_stages.empty())
      throw ConfigError("model.fusion_stages", "audio pathway disabled but fusion stages requested");
    if (!with_audio && !avs_stages.empty())
      throw ConfigError("model.avs_stages", "audio pathway disabled but AVS stages requested");
    if (!with_visual && !with_audio) throw ConfigError("model.with_visual", "no pathway enabled");
    if (!with_visual && with_fast) throw ConfigError("model.with_fast", "fast pathway needs the visual side");
    if (!with_visual)
      for (const std::string& s : fusion_stages)
        if (s != "pool5")
          throw ConfigError("model.fusion_stages", "stage '" + s + "' needs the visual pathways");
    if (!with_visual && !avs_stages.empty())
      throw ConfigError("model.avs_stages", "AVS heads need the visual pathways");
    if (fusion_kind == FusionKind::AtoFtoS && !with_fast)
      for (const std::string& s : fusion_stages)
        if (s != "pool5") throw ConfigError("model.fusion_kind", "AtoFtoS fusion needs the Fast pathway");
  }
};

inline ModelConfig preset_model(const std::string& name) {
  ModelConfig cfg;  // avslowfast-r50-4x16
  if (name == "avslowfast-r50-4x16") {
    return cfg;
  }
  if (name == "slowfast-r50-4x16") {
    cfg.with_audio = false;
    cfg.fusion_stages.clear();
    return cfg;
  }
  if (name == "slow-only") {
    cfg.with_audio = false;
    cfg.with_fast = false;
    cfg.fusion_stages.clear();
    return cfg;
  }
  if (name == "audio-only") {
    cfg.with_visual = false;
    cfg.with_fast = false;
    cfg.fusion_stages = {"pool5"};
    return cfg;
  }
  if (name == "desk-default" || name == "desk-slowfast") {
    cfg.T = 2;
    cfg.tau = 4;
    cfg.alpha_f = 4;
    cfg.alpha_a = 8;
    cfg.S = 32;
    cfg.eval_spatial = 32;
    cfg.F_mel = 16;
    cfg.T_a = 32;
    cfg.width_mult = 1.0 / 8.0;
    cfg.num_classes = 4;
    if (name == "desk-slowfast") {
      cfg.with_audio = false;
      cfg.fusion_stages.clear();
    }
    return cfg;
  }
  throw ConfigError("preset", "unknown preset '" + name +
                                  "' (known: avslowfast-r50-4x16, slowfast-r50-4x16, slow-only, audio-only, "
                                  "desk-default, desk-slowfast)");
}

}  // namespace avsf
