#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avsf/core/gradcheck.hpp"
#include "avsf/core/ops.hpp"
#include "avsf/model/builder.hpp"

namespace avsf {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

namespace detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero, so ReLU kinks never sit within a
// finite-difference step.
inline Tensor rand_tensor_nz(Shape shape, Rng& rng, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.values()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

// Project onto fixed random coefficients so every output element carries an
// independent gradient signal.
inline Tensor project(const Tensor& y, uint64_t key) {
  Rng r(key);
  Tensor coef = Tensor::zeros(y.shape());
  for (double& v : coef.values()) v = r.uniform(-1.0, 1.0);
  return sum_all(mul(y, coef));
}

}  // namespace detail

// Per-operation gradient checks on randomized small shapes.
inline std::vector<SuiteEntry> gradcheck_ops_suite(int64_t seeds) {
  std::vector<SuiteEntry> out;
  auto run = [&](const std::string& name, double tol, double eps,
                 const std::function<GradCheckReport(Rng&)>& fn) {
    SuiteEntry e;
    e.name = name;
    e.tolerance = tol;
    for (int64_t s = 0; s < seeds; ++s) {
      Rng rng(static_cast<uint64_t>(s) * 977 + 13);
      GradCheckReport r = fn(rng);
      e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
    }
    e.pass = e.max_rel_err < e.tolerance;
    out.push_back(e);
    (void)eps;
  };

  run("conv3d", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({1, 2, 3, 5, 5}, rng);
    Tensor w = detail::rand_tensor({2, 2, 3, 3, 3}, rng);
    auto fn = [&]() { return detail::project(conv3d(x, w, {1, 2, 2}, {1, 1, 1}), 7); };
    return gradcheck(fn, {{"x", x}, {"w", w}});
  });
  run("conv2d", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({2, 2, 6, 6}, rng);
    Tensor w = detail::rand_tensor({3, 2, 3, 3}, rng);
    auto fn = [&]() { return detail::project(conv2d(x, w, {2, 1}, {1, 1}), 11); };
    return gradcheck(fn, {{"x", x}, {"w", w}});
  });
  run("batch_norm_train", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({3, 2, 4, 4}, rng);
    Tensor g = detail::rand_tensor({2}, rng, 0.5, 1.5);
    Tensor b = detail::rand_tensor({2}, rng, -0.5, 0.5);
    BnState bn(2);
    auto fn = [&]() { return detail::project(batch_norm(x, g, b, bn, Mode::train), 3); };
    return gradcheck(fn, {{"x", x}, {"gamma", g}, {"beta", b}});
  });
  run("batch_norm_eval", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({3, 2, 4, 4}, rng);
    Tensor g = detail::rand_tensor({2}, rng, 0.5, 1.5);
    Tensor b = detail::rand_tensor({2}, rng, -0.5, 0.5);
    BnState bn(2);
    batch_norm(x.detach(), g.detach(), b.detach(), bn, Mode::train);  // record stats
    auto fn = [&]() { return detail::project(batch_norm(x, g, b, bn, Mode::eval), 3); };
    return gradcheck(fn, {{"x", x}, {"gamma", g}, {"beta", b}});
  });
  run("relu", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor_nz({3, 7}, rng);
    auto fn = [&]() { return detail::project(relu(x), 5); };
    return gradcheck(fn, {{"x", x}});
  });
  run("add_mul_scale", 1e-4, 1e-5, [](Rng& rng) {
    Tensor a = detail::rand_tensor({2, 5}, rng);
    Tensor b = detail::rand_tensor({2, 5}, rng);
    auto fn = [&]() { return detail::project(scale(mul(add(a, b), b), 0.7), 9); };
    return gradcheck(fn, {{"a", a}, {"b", b}});
  });
  run("concat_channels", 1e-4, 1e-5, [](Rng& rng) {
    Tensor a = detail::rand_tensor({2, 3, 4}, rng);
    Tensor b = detail::rand_tensor({2, 2, 4}, rng);
    auto fn = [&]() { return detail::project(concat_channels({a, b}), 13); };
    return gradcheck(fn, {{"a", a}, {"b", b}});
  });
  run("max_pool3d", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({1, 2, 3, 6, 6}, rng);
    auto fn = [&]() { return detail::project(max_pool3d(x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}), 17); };
    return gradcheck(fn, {{"x", x}});
  });
  run("global_avg_pool", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({2, 3, 4, 5}, rng);
    auto fn = [&]() { return detail::project(global_avg_pool(x), 19); };
    return gradcheck(fn, {{"x", x}});
  });
  run("mean_axis_tile_repeat", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({2, 3, 2, 4}, rng);
    auto fn = [&]() {
      Tensor pooled = mean_axis(x, 2);                 // [2,3,4]
      Tensor up = repeat_temporal(pooled, 2);          // [2,3,8]
      return detail::project(tile_spatial(up, 2, 3), 23);
    };
    return gradcheck(fn, {{"x", x}});
  });
  run("broadcast_feature", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({2, 3}, rng);
    auto fn = [&]() { return detail::project(broadcast_feature(x, 2, 3, 2), 29); };
    return gradcheck(fn, {{"x", x}});
  });
  run("reshape", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({2, 6}, rng);
    auto fn = [&]() { return detail::project(reshape(x, {3, 4}), 31); };
    return gradcheck(fn, {{"x", x}});
  });
  run("fully_connected", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({3, 4}, rng);
    Tensor w = detail::rand_tensor({5, 4}, rng);
    Tensor b = detail::rand_tensor({5}, rng);
    auto fn = [&]() { return detail::project(fully_connected(x, w, b), 37); };
    return gradcheck(fn, {{"x", x}, {"w", w}, {"b", b}});
  });
  run("dropout", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({4, 8}, rng);
    const uint64_t mask_seed = rng.next_u64();
    auto fn = [&]() {
      Rng dr(mask_seed);
      return detail::project(dropout(x, 0.4, dr, Mode::train), 41);
    };
    return gradcheck(fn, {{"x", x}});
  });
  run("softmax_cross_entropy", 1e-4, 1e-5, [](Rng& rng) {
    Tensor z = detail::rand_tensor({4, 5}, rng);
    std::vector<int64_t> labels = {0, 2, 4, 1};
    auto fn = [&]() { return softmax_cross_entropy(z, labels); };
    return gradcheck(fn, {{"logits", z}});
  });
  run("sigmoid_bce", 1e-4, 1e-5, [](Rng& rng) {
    Tensor z = detail::rand_tensor({6}, rng);
    std::vector<double> y = {1, 0, 1, 1, 0, 0};
    auto fn = [&]() { return sigmoid_bce(z, y); };
    return gradcheck(fn, {{"logits", z}});
  });
  run("sigmoid_bce_weighted", 1e-4, 1e-5, [](Rng& rng) {
    Tensor z = detail::rand_tensor({6}, rng);
    std::vector<double> y = {1, 0, 1, 0, 1, 0};
    std::vector<double> w = {1, 1, 0, 1, 0, 1};
    auto fn = [&]() { return sigmoid_bce_weighted(z, y, w); };
    return gradcheck(fn, {{"logits", z}});
  });
  run("scale_rows", 1e-4, 1e-5, [](Rng& rng) {
    Tensor x = detail::rand_tensor({3, 4}, rng);
    std::vector<double> s = {1.0, 0.0, 0.5};
    auto fn = [&]() { return detail::project(scale_rows(x, s), 43); };
    return gradcheck(fn, {{"x", x}});
  });
  run("attend_global", 1e-4, 1e-5, [](Rng& rng) {
    Tensor q = detail::rand_tensor({2, 3}, rng);
    Tensor k = detail::rand_tensor({2, 3, 5}, rng);
    Tensor v = detail::rand_tensor({2, 3, 5}, rng);
    auto fn = [&]() { return detail::project(attend_global(q, k, v), 47); };
    return gradcheck(fn, {{"q", q}, {"k", k}, {"v", v}});
  });
  return out;
}

// End-to-end gradient checks through each audio-visual fusion variant on a
// micro instantiation. Rectifier kinks make eps=1e-5 finite differences
// unreliable across a deep graph, so these run at eps=1e-6.
inline std::vector<SuiteEntry> gradcheck_fusion_suite(int64_t seeds, int64_t leaf_sample = 20,
                                                      int64_t elem_sample = 8) {
  std::vector<SuiteEntry> out;
  for (FusionKind kind : {FusionKind::AtoFS, FusionKind::AtoFtoS, FusionKind::AVNonlocal}) {
    SuiteEntry e;
    e.name = std::string("fusion_") + fusion_kind_name(kind);
    e.tolerance = 1e-4;
    for (int64_t s = 0; s < seeds; ++s) {
      // T=2 and batch 3 keep at least 6 values behind every BN statistic;
      // smaller graphs park pre-ReLU sums within finite-difference reach of
      // the kink and poison the numeric side.
      ModelConfig cfg;
      cfg.T = 2;
      cfg.tau = 2;
      cfg.alpha_f = 2;
      cfg.alpha_a = 4;
      cfg.S = 8;
      cfg.eval_spatial = 8;
      cfg.F_mel = 4;
      cfg.T_a = 8;
      cfg.width_mult = 1.0 / 64.0;
      cfg.depths = {1, 1, 1, 1};
      cfg.num_classes = 2;
      cfg.dropout_rate = 0.0;
      cfg.fusion_kind = kind;
      cfg.fusion_stages = {"res2", "res3", "res4", "pool5"};
      Model model(cfg, static_cast<uint64_t>(s) + 100);
      Rng rng(static_cast<uint64_t>(s) * 31 + 7);
      Tensor slow = detail::rand_tensor({3, 3, 2, 8, 8}, rng, -0.5, 0.5, false);
      Tensor fast = detail::rand_tensor({3, 3, 4, 8, 8}, rng, -0.5, 0.5, false);
      Tensor audio = detail::rand_tensor({3, 1, 4, 8}, rng, -0.5, 0.5, false);
      const Rng fwd_rng(3);
      auto fn = [&]() {
        BatchInputs in;
        in.slow = slow;
        in.fast = fast;
        in.audio = audio;
        ForwardResult r = model.forward(in, Mode::train, fwd_rng);
        return softmax_cross_entropy(r.logits, {0, 1, 0});
      };
      // Always check the fusion parameters; sample the rest of the model.
      std::vector<std::pair<std::string, Tensor>> leaves;
      std::vector<std::pair<std::string, Tensor>> others;
      for (auto& [name, p] : model.params()) {
        if (name.rfind("fusion.", 0) == 0) leaves.emplace_back(name, p);
        else others.emplace_back(name, p);
      }
      for (int64_t i = 0; i < leaf_sample && !others.empty(); ++i)
        leaves.push_back(others[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(others.size()) - 1))]);
      GradCheckReport r = gradcheck_sampled(fn, leaves, 1e-6, elem_sample, rng);
      e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
    }
    e.pass = e.max_rel_err < e.tolerance;
    out.push_back(e);
  }
  return out;
}

inline std::vector<SuiteEntry> run_gradcheck_suite(const std::string& suite, int64_t seeds) {
  std::vector<SuiteEntry> out;
  if (suite == "ops" || suite == "all") {
    auto v = gradcheck_ops_suite(seeds);
    out.insert(out.end(), v.begin(), v.end());
  }
  if (suite == "fusion" || suite == "all") {
    auto v = gradcheck_fusion_suite(seeds);
    out.insert(out.end(), v.begin(), v.end());
  }
  if (out.empty()) throw std::invalid_argument("gradcheck: unknown suite '" + suite + "' (ops|fusion|all)");
  return out;
}

}  // namespace avsf
