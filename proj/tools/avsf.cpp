#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avsf/audio/melspec.hpp"
#include "avsf/audio/wav.hpp"
#include "avsf/io/runconfig.hpp"
#include "avsf/model/gradsuite.hpp"
#include "avsf/model/shapes.hpp"
#include "avsf/train/checkpoint.hpp"
#include "avsf/train/loop.hpp"

namespace fs = std::filesystem;
using namespace avsf;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  int64_t seed = -1;
  std::vector<std::string> extras;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "configuration file");
  sub->add_option("--out", o.out_dir, "run directory for outputs");
  sub->add_option("--preset", o.preset, "named model preset");
  sub->add_option("--seed", o.seed, "seed shortcut (sets train.seed and data.seed)");
  sub->allow_extras();
}

RunConfig resolve(const CommonOpts& o) {
  RunConfig rc;
  if (!o.preset.empty()) rc.model = preset_model(o.preset);
  if (!o.config_path.empty()) apply_config_text(rc, read_file(o.config_path));
  for (size_t i = 0; i < o.extras.size(); ++i) {
    std::string key = o.extras[i];
    if (key.rfind("--", 0) != 0 || key.find('.') == std::string::npos)
      throw ConfigError(key, "expected a dotted override like --model.T");
    if (i + 1 >= o.extras.size()) throw ConfigError(key, "missing value");
    apply_config_kv(rc, key.substr(2), o.extras[++i]);
  }
  if (o.seed >= 0) {
    rc.train.seed = static_cast<uint64_t>(o.seed);
    rc.data.seed = static_cast<uint64_t>(o.seed);
  }
  rc.model.dropout_rate = rc.train.dropout_rate;
  return rc;
}

void echo_config(const CommonOpts& o, const RunConfig& rc) {
  if (o.out_dir.empty()) return;
  fs::create_directories(o.out_dir);
  write_file((fs::path(o.out_dir) / "resolved.cfg").string(), render_config(rc));
}

std::string manifest_of(const std::string& dir) {
  if (dir.empty()) throw ConfigError("run.data_dir", "dataset directory not set");
  if (fs::path(dir).filename() == "manifest.csv") return dir;
  return (fs::path(dir) / "manifest.csv").string();
}

int cmd_shapes(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  rc.model.validate();
  ShapeReport rep = infer_shapes(rc.model);
  std::cout << report_table(rep);
  echo_config(o, rc);
  if (!o.out_dir.empty()) {
    write_file((fs::path(o.out_dir) / "shapes.csv").string(), report_csv(rep));
    write_file((fs::path(o.out_dir) / "shapes.txt").string(), report_table(rep));
  }
  return 0;
}

int cmd_flops(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  rc.model.validate();
  ShapeReport rep = count_flops(rc.model);
  std::cout << report_table(rep);
  echo_config(o, rc);
  if (!o.out_dir.empty()) {
    write_file((fs::path(o.out_dir) / "flops.csv").string(), report_csv(rep));
    write_file((fs::path(o.out_dir) / "flops.txt").string(), report_table(rep));
  }
  return 0;
}

int cmd_melspec(const CommonOpts& o, const std::string& wav_flag, bool resample, int64_t mels,
                int64_t frames) {
  RunConfig rc = resolve(o);
  const std::string path = !wav_flag.empty() ? wav_flag : rc.wav;
  if (path.empty()) throw ConfigError("run.wav", "no WAV input given (use --wav)");
  Waveform w = load_wav(path);
  if (w.sample_rate != 16000) {
    if (!resample)
      throw std::runtime_error("melspec: input is " + std::to_string(w.sample_rate) +
                               " Hz; pass --resample to convert to 16 kHz");
    w = resample_linear(w, 16000);
  }
  const int64_t target = frames > 0 ? frames : static_cast<int64_t>(w.samples.size()) / kStftHop + 1;
  Spectrogram spec = log_mel(w, target, mels);
  std::printf("log-mel %lld x %lld (freq x time), hop %.3f s, window %.3f s\n",
              static_cast<long long>(spec.bins.dim(0)), static_cast<long long>(spec.bins.dim(1)),
              spec.hop_seconds, spec.window_seconds);
  echo_config(o, rc);
  if (!o.out_dir.empty()) {
    std::ostringstream os;
    save_tensor(os, spec.bins);
    write_file((fs::path(o.out_dir) / "melspec.avsf").string(), os.str());
    std::printf("wrote %s\n", (fs::path(o.out_dir) / "melspec.avsf").string().c_str());
  }
  return 0;
}

int cmd_synth(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  rc.data.validate();
  if (o.out_dir.empty()) throw ConfigError("out", "synth needs --out");
  const std::string dir = (fs::path(o.out_dir) / rc.data.split).string();
  const std::string manifest = generate_dataset(rc.data, dir);
  echo_config(o, rc);
  std::printf("wrote %s (%lld clips)\n", manifest.c_str(),
              static_cast<long long>(rc.data.num_classes * rc.data.clips_per_class));
  return 0;
}

int cmd_train(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  rc.validate();
  if (o.out_dir.empty()) throw ConfigError("out", "train needs --out");
  if (rc.task == "ssl") {
    if (!rc.model.rot_head || rc.model.avs_stages.empty())
      throw ConfigError("run.task", "ssl needs model.rot_head = true and non-empty model.avs_stages");
  }
  Dataset dtr = Dataset::load(manifest_of(rc.data_dir));
  std::vector<ClipSample> train_clips = load_all_clips(dtr);
  std::vector<ClipSample> val_clips;
  if (!rc.val_data_dir.empty()) val_clips = load_all_clips(Dataset::load(manifest_of(rc.val_data_dir)));

  Model model(rc.model, rc.train.seed);
  if (!rc.checkpoint.empty()) load_checkpoint(rc.checkpoint, model);
  TrainResult tr = rc.task == "ssl" ? ssl_pretrain(model, train_clips, val_clips, rc.train)
                                    : train_supervised(model, train_clips, val_clips, rc.train);

  fs::create_directories(o.out_dir);
  echo_config(o, rc);
  write_file((fs::path(o.out_dir) / "metrics.csv").string(), tr.logs.metrics_csv);
  write_file((fs::path(o.out_dir) / "events.jsonl").string(), tr.logs.events_jsonl);
  save_checkpoint((fs::path(o.out_dir) / "checkpoint.avsa").string(), model,
                  {{"iterations", tr.state.iteration}, {"task", rc.task}});
  if (rc.task == "ssl")
    std::printf("ssl done: %lld iters, sync_acc %.4f\n", static_cast<long long>(tr.state.iteration),
                tr.final_sync_acc);
  else
    std::printf("train done: %lld iters, val_acc %.4f\n", static_cast<long long>(tr.state.iteration),
                tr.final_val_acc);
  return 0;
}

int cmd_eval(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  if (rc.checkpoint.empty()) throw ConfigError("run.checkpoint", "eval needs a checkpoint");
  const nlohmann::json meta = read_checkpoint_meta(rc.checkpoint);
  ModelConfig mc = model_config_from_json(meta.at("config"));
  Model model(mc, 0);
  load_checkpoint(rc.checkpoint, model);
  std::vector<ClipSample> clips = load_all_clips(Dataset::load(manifest_of(rc.data_dir)));
  const double acc = evaluate(model, clips, rc.train.eval_clips);
  std::printf("top1 %.4f over %zu videos (%lld clips each)\n", acc, clips.size(),
              static_cast<long long>(rc.train.eval_clips));
  echo_config(o, rc);
  if (!o.out_dir.empty()) {
    nlohmann::json j = {{"top1", acc}, {"videos", clips.size()}, {"clips_per_video", rc.train.eval_clips}};
    write_file((fs::path(o.out_dir) / "eval.json").string(), j.dump(2) + "\n");
  }
  return 0;
}

int cmd_probe(const CommonOpts& o) {
  RunConfig rc = resolve(o);
  if (rc.checkpoint.empty()) throw ConfigError("run.checkpoint", "probe needs a checkpoint");
  const nlohmann::json meta = read_checkpoint_meta(rc.checkpoint);
  ModelConfig mc = model_config_from_json(meta.at("config"));
  Model model(mc, 0);
  load_checkpoint(rc.checkpoint, model);
  std::vector<ClipSample> train_clips = load_all_clips(Dataset::load(manifest_of(rc.data_dir)));
  std::vector<ClipSample> val_clips = load_all_clips(Dataset::load(manifest_of(rc.val_data_dir)));
  ProbeConfig pc;
  pc.seed = rc.train.seed;
  ProbeResult pr = linear_probe(model, train_clips, val_clips, pc);
  std::printf("probe top1 %.4f (train %.4f)\n", pr.val_acc, pr.train_acc);
  echo_config(o, rc);
  if (!o.out_dir.empty()) {
    nlohmann::json j = {{"val_top1", pr.val_acc}, {"train_top1", pr.train_acc}};
    write_file((fs::path(o.out_dir) / "probe.json").string(), j.dump(2) + "\n");
  }
  return 0;
}

int cmd_gradcheck(const CommonOpts& o, const std::string& suite, int64_t seeds) {
  std::vector<SuiteEntry> entries = run_gradcheck_suite(suite, seeds);
  bool all_pass = true;
  std::ostringstream report;
  for (const SuiteEntry& e : entries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s max_rel %.3e  tol %.0e  %s\n", e.name.c_str(), e.max_rel_err,
                  e.tolerance, e.pass ? "PASS" : "FAIL");
    report << line;
    all_pass = all_pass && e.pass;
  }
  std::cout << report.str();
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    write_file((fs::path(o.out_dir) / "gradcheck.txt").string(), report.str());
  }
  if (!all_pass) {
    std::cerr << "error: gradcheck failures\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AVSlowFast toolkit: three-pathway audiovisual networks at desk scale"};
  app.require_subcommand(1);

  CommonOpts o_shapes, o_flops, o_mel, o_synth, o_train, o_eval, o_probe, o_grad;
  std::string mel_wav, grad_suite = "all";
  bool mel_resample = false;
  int64_t mel_mels = 80, mel_frames = 0, grad_seeds = 20;

  CLI::App* s_shapes = app.add_subcommand("shapes", "per-stage output extents and parameters");
  add_common(s_shapes, o_shapes);
  CLI::App* s_flops = app.add_subcommand("flops", "per-stage multiply-add counts at inference size");
  add_common(s_flops, o_flops);
  CLI::App* s_mel = app.add_subcommand("melspec", "log-mel spectrogram of a WAV file");
  add_common(s_mel, o_mel);
  s_mel->add_option("--wav", mel_wav, "input WAV (PCM16 mono)");
  s_mel->add_flag("--resample", mel_resample, "resample non-16 kHz input");
  s_mel->add_option("--mels", mel_mels, "mel bin count");
  s_mel->add_option("--frames", mel_frames, "target frame count (0 = natural)");
  CLI::App* s_synth = app.add_subcommand("synth", "generate a synthetic audiovisual dataset");
  add_common(s_synth, o_synth);
  CLI::App* s_train = app.add_subcommand("train", "supervised training or SSL pretraining");
  add_common(s_train, o_train);
  CLI::App* s_eval = app.add_subcommand("eval", "multi-clip evaluation of a checkpoint");
  add_common(s_eval, o_eval);
  CLI::App* s_probe = app.add_subcommand("probe", "linear probe on a frozen checkpoint");
  add_common(s_probe, o_probe);
  CLI::App* s_grad = app.add_subcommand("gradcheck", "central-difference gradient checks");
  add_common(s_grad, o_grad);
  s_grad->add_option("--suite", grad_suite, "ops | fusion | all");
  s_grad->add_option("--seeds", grad_seeds, "random seeds per check");

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    CommonOpts* o = nullptr;
    if (sub == s_shapes) o = &o_shapes;
    else if (sub == s_flops) o = &o_flops;
    else if (sub == s_mel) o = &o_mel;
    else if (sub == s_synth) o = &o_synth;
    else if (sub == s_train) o = &o_train;
    else if (sub == s_eval) o = &o_eval;
    else if (sub == s_probe) o = &o_probe;
    else o = &o_grad;
    o->extras = sub->remaining();

    if (sub == s_shapes) return cmd_shapes(o_shapes);
    if (sub == s_flops) return cmd_flops(o_flops);
    if (sub == s_mel) return cmd_melspec(o_mel, mel_wav, mel_resample, mel_mels, mel_frames);
    if (sub == s_synth) return cmd_synth(o_synth);
    if (sub == s_train) return cmd_train(o_train);
    if (sub == s_eval) return cmd_eval(o_eval);
    if (sub == s_probe) return cmd_probe(o_probe);
    return cmd_gradcheck(o_grad, grad_suite, grad_seeds);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
