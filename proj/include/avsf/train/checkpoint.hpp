#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsf/data/archive.hpp"
#include "avsf/model/builder.hpp"

namespace avsf {

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"T", c.T},
          {"tau", c.tau},
          {"alpha_f", c.alpha_f},
          {"alpha_a", c.alpha_a},
          {"beta_f", c.beta_f},
          {"beta_a", c.beta_a},
          {"S", c.S},
          {"eval_spatial", c.eval_spatial},
          {"F_mel", c.F_mel},
          {"T_a", c.T_a},
          {"fusion_kind", fusion_kind_name(c.fusion_kind)},
          {"fusion_stages", std::vector<std::string>(c.fusion_stages.begin(), c.fusion_stages.end())},
          {"avs_stages", std::vector<std::string>(c.avs_stages.begin(), c.avs_stages.end())},
          {"width_mult", c.width_mult},
          {"num_classes", c.num_classes},
          {"with_visual", c.with_visual},
          {"with_fast", c.with_fast},
          {"with_audio", c.with_audio},
          {"rot_head", c.rot_head},
          {"depths", std::vector<int64_t>(c.depths.begin(), c.depths.end())},
          {"dropout_rate", c.dropout_rate}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.T = j.at("T");
  c.tau = j.at("tau");
  c.alpha_f = j.at("alpha_f");
  c.alpha_a = j.at("alpha_a");
  c.beta_f = j.at("beta_f");
  c.beta_a = j.at("beta_a");
  c.S = j.at("S");
  c.eval_spatial = j.at("eval_spatial");
  c.F_mel = j.at("F_mel");
  c.T_a = j.at("T_a");
  c.fusion_kind = parse_fusion_kind(j.at("fusion_kind"));
  c.fusion_stages.clear();
  for (const auto& s : j.at("fusion_stages")) c.fusion_stages.insert(s.get<std::string>());
  c.avs_stages.clear();
  for (const auto& s : j.at("avs_stages")) c.avs_stages.insert(s.get<std::string>());
  c.width_mult = j.at("width_mult");
  c.num_classes = j.at("num_classes");
  c.with_visual = j.at("with_visual");
  c.with_fast = j.at("with_fast");
  c.with_audio = j.at("with_audio");
  c.rot_head = j.at("rot_head");
  const auto depths = j.at("depths");
  for (size_t i = 0; i < 4; ++i) c.depths[i] = depths.at(i);
  c.dropout_rate = j.at("dropout_rate");
  return c;
}

// Checkpoint: archive of tensor records for every parameter and BN buffer,
// plus a JSON meta entry holding the model config.
inline void save_checkpoint(const std::string& path, const Model& model,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::vector<std::pair<std::string, std::string>> entries;
  nlohmann::json meta = {{"config", model_config_to_json(model.cfg())}, {"extra", extra}};
  nlohmann::json bn_meta = nlohmann::json::object();
  for (const auto& [name, bn] : model.bn_states()) bn_meta[name] = bn->batches_tracked;
  meta["bn_batches"] = bn_meta;
  entries.emplace_back("meta", meta.dump());
  for (const auto& [name, p] : model.params()) {
    std::ostringstream os;
    save_tensor(os, p);
    entries.emplace_back("param:" + name, os.str());
  }
  for (const auto& [name, bn] : model.bn_states()) {
    std::ostringstream m, v;
    save_tensor(m, Tensor::from({static_cast<int64_t>(bn->running_mean.size())}, bn->running_mean));
    save_tensor(v, Tensor::from({static_cast<int64_t>(bn->running_var.size())}, bn->running_var));
    entries.emplace_back("bn_mean:" + name, m.str());
    entries.emplace_back("bn_var:" + name, v.str());
  }
  write_file(path, encode_archive(entries));
}

inline nlohmann::json read_checkpoint_meta(const std::string& path) {
  for (auto& [name, payload] : decode_archive(read_file(path)))
    if (name == "meta") return nlohmann::json::parse(payload);
  throw std::runtime_error("checkpoint: missing meta entry in " + path);
}

inline void load_checkpoint(const std::string& path, Model& model) {
  nlohmann::json meta;
  std::map<std::string, std::string> blobs;
  for (auto& [name, payload] : decode_archive(read_file(path))) {
    if (name == "meta") meta = nlohmann::json::parse(payload);
    else blobs.emplace(name, std::move(payload));
  }
  if (meta.is_null()) throw std::runtime_error("checkpoint: missing meta entry");
  for (auto& [name, p] : model.params()) {
    auto it = blobs.find("param:" + name);
    if (it == blobs.end()) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    std::istringstream is(it->second);
    Tensor t = load_tensor(is);
    if (t.shape() != p.shape())
      throw std::runtime_error("checkpoint: parameter '" + name + "' is " + shape_str(t.shape()) +
                               ", model expects " + shape_str(p.shape()));
    p.values() = t.values();
  }
  for (auto& [name, bn] : model.bn_states()) {
    auto im = blobs.find("bn_mean:" + name);
    auto iv = blobs.find("bn_var:" + name);
    if (im == blobs.end() || iv == blobs.end())
      throw std::runtime_error("checkpoint: missing BN buffers for '" + name + "'");
    std::istringstream ms(im->second), vs(iv->second);
    bn->running_mean = load_tensor(ms).values();
    bn->running_var = load_tensor(vs).values();
    bn->batches_tracked = meta.at("bn_batches").value(name, int64_t{0});
  }
}

}  // namespace avsf
