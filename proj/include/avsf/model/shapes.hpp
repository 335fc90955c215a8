#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avsf/model/builder.hpp"
#include "avsf/model/config.hpp"

namespace avsf {

struct ShapeRow {
  std::string stage;
  std::string pathway;
  int64_t t = 0, h = 0, w = 0;  // audio rows report (time, freq, 1)
  int64_t channels = 0;
  int64_t flops = 0;
  int64_t params = 0;
};

struct ShapeReport {
  std::vector<ShapeRow> rows;
  int64_t total_flops = 0;
  int64_t total_params = 0;
  std::map<std::string, int64_t> pathway_flops;  // slow, fast, audio, fusion_sf, fusion_av, head

  double gflops() const { return static_cast<double>(total_flops) / 1e9; }
  // Fraction of compute attributable to the Audio pathway, its lateral
  // connections included.
  double audio_fraction() const {
    if (total_flops == 0) return 0.0;
    int64_t a = 0;
    auto it = pathway_flops.find("audio");
    if (it != pathway_flops.end()) a += it->second;
    it = pathway_flops.find("fusion_av");
    if (it != pathway_flops.end()) a += it->second;
    return static_cast<double>(a) / static_cast<double>(total_flops);
  }
};

namespace detail {

inline ShapeRow make_stage_row(const Model& m, const std::string& pathway, const std::string& stage,
                               int64_t channels) {
  ShapeRow r;
  r.stage = stage;
  r.pathway = pathway;
  r.channels = channels;
  auto it = m.planned_extents().find(pathway + "/" + stage);
  if (it != m.planned_extents().end()) {
    const Ext3& e = it->second;
    if (pathway == "audio") {  // stored as (1,F,T)
      r.t = e[2];
      r.h = e[1];
      r.w = 1;
    } else {
      r.t = e[0];
      r.h = e[1];
      r.w = e[2];
    }
  }
  for (const LayerDesc& d : m.descs()) {
    if (d.pathway != pathway || d.stage != stage) continue;
    if (d.inference) r.flops += d.flops();
    r.params += d.params();
  }
  return r;
}

}  // namespace detail

// Analytic per-stage extents, FLOPs and parameter counts for a config,
// evaluated at the given spatial input size.
inline ShapeReport report_for(const ModelConfig& cfg_in, int64_t spatial) {
  ModelConfig cfg = cfg_in;
  cfg.S = spatial;
  Model m(cfg, 0, /*with_params=*/false);
  ShapeReport rep;

  static const int64_t out_base[4] = {256, 512, 1024, 2048};
  const std::vector<std::string> stages = {"conv1", "pool1", "res2", "res3", "res4", "res5"};

  auto raw_row = [&](const std::string& pw) {
    ShapeRow r;
    r.stage = "raw";
    r.pathway = pw;
    if (pw == "audio") {
      r.t = cfg.T_a;
      r.h = cfg.F_mel;
      r.w = 1;
      r.channels = 1;
    } else {
      r.t = cfg.raw_frames();
      r.h = r.w = cfg.S;
      r.channels = 3;
    }
    return r;
  };
  auto data_row = [&](const std::string& pw) {
    ShapeRow r;
    r.stage = "data";
    r.pathway = pw;
    r.t = pw == "slow" ? cfg.T : cfg.fast_frames();
    r.h = r.w = cfg.S;
    r.channels = 3;
    return r;
  };

  std::vector<std::string> pathways;
  if (cfg.with_visual) pathways.push_back("slow");
  if (cfg.with_fast) pathways.push_back("fast");
  if (cfg.with_audio) pathways.push_back("audio");

  for (const auto& pw : pathways) {
    rep.rows.push_back(raw_row(pw));
    if (pw != "audio") rep.rows.push_back(data_row(pw));
    for (const auto& st : stages) {
      if (pw == "audio" && st == "pool1") continue;  // no audio pool1 stage
      int64_t ch = 0;
      if (st == "conv1" || st == "pool1") {
        ch = pw == "slow" ? cfg.slow_width(64) : pw == "fast" ? cfg.fast_width(64) : cfg.audio_width(64);
      } else {
        const size_t si = st == "res2" ? 0 : st == "res3" ? 1 : st == "res4" ? 2 : 3;
        ch = pw == "slow"   ? cfg.slow_width(out_base[si])
             : pw == "fast" ? cfg.fast_width(out_base[si])
                            : cfg.audio_width(out_base[si]);
      }
      rep.rows.push_back(detail::make_stage_row(m, pw, st, ch));
    }
  }

  // Lateral connections and the classifier, aggregated.
  ShapeRow sf{"lateral", "fusion_sf"}, av{"lateral", "fusion_av"}, head{"head", "head"};
  for (const LayerDesc& d : m.descs()) {
    ShapeRow* target = nullptr;
    if (d.pathway == "fusion") target = d.name.rfind("fusion.sf.", 0) == 0 ? &sf : &av;
    if (d.pathway == "head") target = &head;
    if (!target) continue;
    if (d.inference) target->flops += d.flops();
    target->params += d.params();
  }
  head.channels = m.head_width();
  rep.rows.push_back(sf);
  rep.rows.push_back(av);
  rep.rows.push_back(head);

  for (const LayerDesc& d : m.descs()) {
    rep.total_params += d.params();
    if (!d.inference) continue;
    std::string key = d.pathway;
    if (d.pathway == "fusion") key = d.name.rfind("fusion.sf.", 0) == 0 ? "fusion_sf" : "fusion_av";
    rep.pathway_flops[key] += d.flops();
    rep.total_flops += d.flops();
  }
  return rep;
}

inline ShapeReport infer_shapes(const ModelConfig& cfg) { return report_for(cfg, cfg.S); }

// FLOPs are reported for one clip at the inference spatial size.
inline ShapeReport count_flops(const ModelConfig& cfg) { return report_for(cfg, cfg.eval_spatial); }

inline std::string report_csv(const ShapeReport& rep) {
  std::ostringstream os;
  os << "stage,pathway,t,h,w,c,flops,params\n";
  for (const ShapeRow& r : rep.rows)
    os << r.stage << ',' << r.pathway << ',' << r.t << ',' << r.h << ',' << r.w << ',' << r.channels << ','
       << r.flops << ',' << r.params << '\n';
  return os.str();
}

inline std::string report_table(const ShapeReport& rep) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %-10s %18s %8s %14s %12s\n", "stage", "pathway", "output (TxHxW)", "C",
                "flops", "params");
  os << buf;
  for (const ShapeRow& r : rep.rows) {
    std::string out = "-";
    if (r.t > 0) out = std::to_string(r.t) + "x" + std::to_string(r.h) + "x" + std::to_string(r.w);
    std::snprintf(buf, sizeof buf, "%-8s %-10s %18s %8lld %14lld %12lld\n", r.stage.c_str(),
                  r.pathway.c_str(), out.c_str(), static_cast<long long>(r.channels),
                  static_cast<long long>(r.flops), static_cast<long long>(r.params));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "total: %.3f GFLOPs, %lld params, audio fraction %.1f%%\n", rep.gflops(),
                static_cast<long long>(rep.total_params), 100.0 * rep.audio_fraction());
  os << buf;
  for (const auto& [k, v] : rep.pathway_flops) {
    std::snprintf(buf, sizeof buf, "  %-10s %.3f GFLOPs\n", k.c_str(), static_cast<double>(v) / 1e9);
    os << buf;
  }
  return os.str();
}

}  // namespace avsf
