#include <cstdio>
#include <filesystem>

#include "avsf/core/gradcheck.hpp"
#include "avsf/model/shapes.hpp"
#include "avsf/train/checkpoint.hpp"
#include "avsf/train/loop.hpp"

using namespace avsf;

int main() {
  // Desk-scale forward/backward.
  ModelConfig mc = preset_model("desk-default");
  Model model(mc, 7);
  std::printf("desk params: %zu tensors\n", model.params().size());

  DatasetSpec dspec;
  dspec.num_classes = 4;
  dspec.clips_per_class = 3;
  dspec.seed = 5;
  const std::string dir = "/tmp/avsf_smoke";
  std::filesystem::remove_all(dir);
  const std::string manifest = generate_dataset(dspec, dir);
  Dataset ds = Dataset::load(manifest);
  std::printf("dataset: %zu clips\n", ds.size());
  std::vector<ClipSample> clips = load_all_clips(ds);

  std::vector<ClipWindow> windows;
  for (size_t i = 0; i < 4; ++i) windows.push_back({i, 2});
  BatchInputs in = assemble_batch(mc, clips, windows);
  std::printf("slow %s fast %s audio %s\n", shape_str(in.slow.shape()).c_str(),
              shape_str(in.fast.shape()).c_str(), shape_str(in.audio.shape()).c_str());
  Rng r(1);
  ForwardResult res = model.forward(in, Mode::train, r);
  std::printf("logits %s\n", shape_str(res.logits.shape()).c_str());
  Tensor loss = softmax_cross_entropy(res.logits, {0, 1, 2, 3});
  std::printf("loss %.4f (ln4=%.4f)\n", loss.item(), std::log(4.0));
  model.zero_grad();
  backward(loss);

  // Shape agreement forward vs planned.
  ShapeReport rep = infer_shapes(mc);
  int mismatches = 0;
  for (const auto& [key, ext] : res.observed) {
    auto it = model.planned_extents().find(key);
    if (it == model.planned_extents().end() || it->second != ext) {
      ++mismatches;
      std::printf("MISMATCH %s\n", key.c_str());
    }
  }
  std::printf("extent mismatches: %d (checked %zu)\n", mismatches, res.observed.size());

  // Short train run.
  TrainConfig tc;
  tc.max_iters = 5;
  tc.warmup_iters = 2;
  tc.batch_size = 4;
  tc.seed = 3;
  TrainResult tr = train_supervised(model, clips, clips, tc);
  std::printf("train 5 iters ok, val_acc=%.3f\n", tr.final_val_acc);

  // Checkpoint round trip.
  save_checkpoint("/tmp/avsf_smoke/ckpt.avsa", model);
  Model model2(mc, 99);
  load_checkpoint("/tmp/avsf_smoke/ckpt.avsa", model2);
  double diff = 0;
  for (size_t i = 0; i < model.params().size(); ++i)
    for (int64_t j = 0; j < model.params()[i].second.size(); ++j)
      diff += std::abs(model.params()[i].second.data()[j] - model2.params()[i].second.data()[j]);
  std::printf("checkpoint param diff: %g\n", diff);

  // Tiny full-model gradcheck.
  ModelConfig tiny = mc;
  tiny.S = 16;
  tiny.T = 2;
  tiny.tau = 2;
  tiny.alpha_f = 2;
  tiny.alpha_a = 4;
  tiny.F_mel = 8;
  tiny.T_a = 8;
  tiny.width_mult = 1.0 / 16.0;
  tiny.depths = {1, 1, 1, 1};
  tiny.num_classes = 2;
  tiny.dropout_rate = 0.0;
  Model tm(tiny, 11);
  Rng ir(2);
  Tensor slow = Tensor::zeros({2, 3, 2, 16, 16});
  Tensor fast = Tensor::zeros({2, 3, 4, 16, 16});
  Tensor audio = Tensor::zeros({2, 1, 8, 8});
  Rng dr(5);
  for (double& v : slow.values()) v = dr.normal() * 0.5;
  for (double& v : fast.values()) v = dr.normal() * 0.5;
  for (double& v : audio.values()) v = dr.normal() * 0.5;
  auto loss_fn = [&]() {
    BatchInputs bi;
    bi.slow = slow;
    bi.fast = fast;
    bi.audio = audio;
    ForwardResult r2 = tm.forward(bi, Mode::train, ir);
    return softmax_cross_entropy(r2.logits, {0, 1});
  };
  std::vector<std::pair<std::string, Tensor>> leaves;
  int count = 0;
  for (auto& [name, p] : tm.params()) {
    if (count++ % 7 == 0) leaves.emplace_back(name, p);  // subset for speed here
  }
  GradCheckReport g = gradcheck(loss_fn, leaves, 1e-5);
  std::printf("tiny model gradcheck: max_rel=%.3g worst=%s\n", g.max_rel_err, g.worst_leaf.c_str());
  return 0;
}
