#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avsf/data/dataset.hpp"
#include "avsf/model/config.hpp"
#include "avsf/train/train.hpp"

namespace avsf {

// Merged view of model + training + dataset configuration plus run paths.
// Parsed from one config file with nested [section] / key = value entries;
// command-line overrides use dotted paths (--model.T 4).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec data;
  std::string task = "supervised";  // run.task: supervised | ssl
  std::string data_dir;             // run.data_dir: training split directory
  std::string val_data_dir;         // run.val_data_dir
  std::string checkpoint;           // run.checkpoint: model weights to load
  std::string wav;                  // run.wav: input for melspec

  void validate() const {
    model.validate();
    train.validate();
    data.validate();
    if (task != "supervised" && task != "ssl")
      throw ConfigError("run.task", "must be 'supervised' or 'ssl', got '" + task + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

inline std::set<std::string> to_stage_set(const std::string& v) {
  std::set<std::string> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "none" || item.empty()) continue;
    out.insert(item);
  }
  return out;
}

}  // namespace detail

// Nested sections with key = value entries; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno), "malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value', got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(key, "key outside any [section]");
    kv.emplace_back(section + "." + key, value);
  }
  return kv;
}

// Apply one dotted key. Unknown keys are errors.
inline void apply_config_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  using namespace detail;
  ModelConfig& m = rc.model;
  TrainConfig& t = rc.train;
  DatasetSpec& d = rc.data;
  if (key == "model.T") m.T = to_int(key, value);
  else if (key == "model.tau") m.tau = to_int(key, value);
  else if (key == "model.alpha_f") m.alpha_f = to_int(key, value);
  else if (key == "model.alpha_a") m.alpha_a = to_int(key, value);
  else if (key == "model.beta_f") m.beta_f = to_double(key, value);
  else if (key == "model.beta_a") m.beta_a = to_double(key, value);
  else if (key == "model.S") m.S = to_int(key, value);
  else if (key == "model.eval_spatial") m.eval_spatial = to_int(key, value);
  else if (key == "model.F_mel") m.F_mel = to_int(key, value);
  else if (key == "model.T_a") m.T_a = to_int(key, value);
  else if (key == "model.fusion_kind") m.fusion_kind = parse_fusion_kind(value);
  else if (key == "model.fusion_stages") m.fusion_stages = to_stage_set(value);
  else if (key == "model.avs_stages") m.avs_stages = to_stage_set(value);
  else if (key == "model.width_mult") m.width_mult = to_double(key, value);
  else if (key == "model.num_classes") m.num_classes = to_int(key, value);
  else if (key == "model.with_visual") m.with_visual = to_bool(key, value);
  else if (key == "model.with_fast") m.with_fast = to_bool(key, value);
  else if (key == "model.with_audio") m.with_audio = to_bool(key, value);
  else if (key == "model.rot_head") m.rot_head = to_bool(key, value);
  else if (key == "model.depths") {
    std::istringstream ss(value);
    std::string item;
    std::vector<int64_t> v;
    while (std::getline(ss, item, ',')) v.push_back(to_int(key, trim(item)));
    if (v.size() != 4) throw ConfigError(key, "expected 4 comma-separated block counts");
    for (size_t i = 0; i < 4; ++i) m.depths[i] = v[i];
  } else if (key == "train.base_lr") t.base_lr = to_double(key, value);
  else if (key == "train.max_iters") t.max_iters = to_int(key, value);
  else if (key == "train.warmup_iters") t.warmup_iters = to_int(key, value);
  else if (key == "train.warmup_start_lr") t.warmup_start_lr = to_double(key, value);
  else if (key == "train.momentum") t.momentum = to_double(key, value);
  else if (key == "train.weight_decay") t.weight_decay = to_double(key, value);
  else if (key == "train.batch_size") t.batch_size = to_int(key, value);
  else if (key == "train.drop_pathway") t.drop_pathway = to_double(key, value);
  else if (key == "train.dropout_rate") t.dropout_rate = to_double(key, value);
  else if (key == "train.seed") t.seed = to_u64(key, value);
  else if (key == "train.avs_weight") t.avs_weight = to_double(key, value);
  else if (key == "train.eval_every") t.eval_every = to_int(key, value);
  else if (key == "train.eval_clips") t.eval_clips = to_int(key, value);
  else if (key == "data.num_classes") d.num_classes = to_int(key, value);
  else if (key == "data.clips_per_class") d.clips_per_class = to_int(key, value);
  else if (key == "data.modality_mix") d.modality_mix = to_double(key, value);
  else if (key == "data.noise") d.noise = to_double(key, value);
  else if (key == "data.seed") d.seed = to_u64(key, value);
  else if (key == "data.split") d.split = value;
  else if (key == "data.frames") d.frames = to_int(key, value);
  else if (key == "data.spatial") d.spatial = to_int(key, value);
  else if (key == "data.samples_per_frame") d.samples_per_frame = to_int(key, value);
  else if (key == "data.sample_rate") d.sample_rate = to_int(key, value);
  else if (key == "run.task") rc.task = value;
  else if (key == "run.data_dir") rc.data_dir = value;
  else if (key == "run.val_data_dir") rc.val_data_dir = value;
  else if (key == "run.checkpoint") rc.checkpoint = value;
  else if (key == "run.wav") rc.wav = value;
  else throw ConfigError(key, "unknown configuration key");
}

inline void apply_config_text(RunConfig& rc, const std::string& text) {
  for (const auto& [k, v] : parse_config_text(text)) apply_config_kv(rc, k, v);
}

inline std::string join_stages(const std::set<std::string>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (const auto& x : s) out += (out.empty() ? "" : ",") + x;
  return out;
}

// Fully resolved configuration, reparseable by apply_config_text.
inline std::string render_config(const RunConfig& rc) {
  std::ostringstream os;
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(17);
  const ModelConfig& m = rc.model;
  const TrainConfig& t = rc.train;
  const DatasetSpec& d = rc.data;
  os << "[model]\n";
  os << "T = " << m.T << "\ntau = " << m.tau << "\nalpha_f = " << m.alpha_f << "\nalpha_a = " << m.alpha_a
     << "\nbeta_f = " << m.beta_f << "\nbeta_a = " << m.beta_a << "\nS = " << m.S
     << "\neval_spatial = " << m.eval_spatial << "\nF_mel = " << m.F_mel << "\nT_a = " << m.T_a
     << "\nfusion_kind = " << fusion_kind_name(m.fusion_kind)
     << "\nfusion_stages = " << join_stages(m.fusion_stages) << "\navs_stages = " << join_stages(m.avs_stages)
     << "\nwidth_mult = " << m.width_mult << "\nnum_classes = " << m.num_classes << "\nwith_visual = "
     << (m.with_visual ? "true" : "false") << "\nwith_fast = " << (m.with_fast ? "true" : "false")
     << "\nwith_audio = " << (m.with_audio ? "true" : "false") << "\nrot_head = "
     << (m.rot_head ? "true" : "false") << "\ndepths = " << m.depths[0] << "," << m.depths[1] << ","
     << m.depths[2] << "," << m.depths[3] << "\n";
  os << "[train]\n";
  os << "base_lr = " << t.base_lr << "\nmax_iters = " << t.max_iters << "\nwarmup_iters = " << t.warmup_iters
     << "\nwarmup_start_lr = " << t.warmup_start_lr << "\nmomentum = " << t.momentum
     << "\nweight_decay = " << t.weight_decay << "\nbatch_size = " << t.batch_size
     << "\ndrop_pathway = " << t.drop_pathway << "\ndropout_rate = " << t.dropout_rate
     << "\nseed = " << t.seed << "\navs_weight = " << t.avs_weight << "\neval_every = " << t.eval_every
     << "\neval_clips = " << t.eval_clips << "\n";
  os << "[data]\n";
  os << "num_classes = " << d.num_classes << "\nclips_per_class = " << d.clips_per_class
     << "\nmodality_mix = " << d.modality_mix << "\nnoise = " << d.noise << "\nseed = " << d.seed
     << "\nsplit = " << d.split << "\nframes = " << d.frames << "\nspatial = " << d.spatial
     << "\nsamples_per_frame = " << d.samples_per_frame << "\nsample_rate = " << d.sample_rate << "\n";
  os << "[run]\n";
  os << "task = " << rc.task << "\ndata_dir = " << rc.data_dir << "\nval_data_dir = " << rc.val_data_dir
     << "\ncheckpoint = " << rc.checkpoint << "\nwav = " << rc.wav << "\n";
  return os.str();
}

}  // namespace avsf
