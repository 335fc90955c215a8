#include <cstdio>

#include "avsf/model/shapes.hpp"

using namespace avsf;

int main() {
  ModelConfig sf = preset_model("slowfast-r50-4x16");
  std::printf("slowfast          %.2f GFLOPs (paper 36.1)\n", count_flops(sf).gflops());

  ModelConfig av = preset_model("avslowfast-r50-4x16");
  for (double ba : {0.125, 0.25, 0.5, 1.0}) {
    ModelConfig c = av;
    c.beta_a = ba;
    std::printf("avsf beta_a=%-5g %.2f GFLOPs\n", ba, count_flops(c).gflops());
  }
  const char* fs[][4] = {{"pool5", "", "", ""},
                         {"res4", "pool5", "", ""},
                         {"res3", "res4", "pool5", ""},
                         {"res2", "res3", "res4", "pool5"}};
  for (auto& row : fs) {
    ModelConfig c = av;
    c.fusion_stages.clear();
    for (const char* s : row)
      if (*s) c.fusion_stages.insert(s);
    ShapeReport r = count_flops(c);
    std::printf("avsf stages={");
    for (const char* s : row)
      if (*s) std::printf("%s,", s);
    std::printf("} %.2f GFLOPs  audio_frac %.1f%%\n", r.gflops(), 100 * r.audio_fraction());
  }
  ModelConfig avnl = av;
  avnl.fusion_kind = FusionKind::AVNonlocal;
  std::printf("avsf nonlocal     %.2f GFLOPs (paper 39.9)\n", count_flops(avnl).gflops());
  ModelConfig avf = av;
  avf.fusion_kind = FusionKind::AtoFtoS;
  std::printf("avsf AtoFtoS      %.2f GFLOPs (paper 51.4)\n", count_flops(avf).gflops());

  // Table 1 shape check at 224.
  ModelConfig t1 = av;
  t1.S = 224;
  ShapeReport rep = infer_shapes(t1);
  std::printf("%s", report_table(rep).c_str());
  return 0;
}
