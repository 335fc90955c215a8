#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "avsf/core/rng.hpp"
#include "avsf/core/tensor.hpp"

namespace avsf {

enum class Mode { train, eval };

namespace detail {

inline int64_t out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad, const char* op,
                          const char* axis) {
  int64_t out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad - k < 0 || out <= 0)
    throw std::invalid_argument(std::string(op) + ": non-positive output extent on " + axis + " axis (in=" +
                                std::to_string(in) + ", kernel=" + std::to_string(k) + ", stride=" +
                                std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
  return out;
}

struct ConvDims {
  int64_t N, C, T, H, W;        // input
  int64_t K, kt, kh, kw;        // kernel
  int64_t st, sh, sw;           // stride
  int64_t pt, ph, pw;           // padding
  int64_t To, Ho, Wo;           // output
};

inline bool pointwise(const ConvDims& d) {
  return d.kt == 1 && d.kh == 1 && d.kw == 1 && d.st == 1 && d.sh == 1 && d.sw == 1 && d.pt == 0 &&
         d.ph == 0 && d.pw == 0;
}

// Zero-padded plane with rows regrouped by W-stride phase so every inner
// loop below runs over a contiguous span. For phase r, row (t,h) holds
// x_pad[t][h][r], x_pad[t][h][r+sw], ... (Ws entries).
struct ConvScratch {
  std::vector<double> data;
  int64_t Tp = 0, Hp = 0, Wp = 0, Ws = 0, sw = 1;

  void resize(const ConvDims& d) {
    Tp = d.T + 2 * d.pt;
    Hp = d.H + 2 * d.ph;
    Wp = d.W + 2 * d.pw;
    sw = d.sw;
    Ws = (Wp + sw - 1) / sw;
    data.assign(static_cast<size_t>(sw * Tp * Hp * Ws), 0.0);
  }
  double* row(int64_t phase, int64_t t, int64_t h) { return data.data() + ((phase * Tp + t) * Hp + h) * Ws; }

  void load(const ConvDims& d, const double* plane) {
    std::fill(data.begin(), data.end(), 0.0);
    for (int64_t t = 0; t < d.T; ++t)
      for (int64_t h = 0; h < d.H; ++h) {
        const double* src = plane + (t * d.H + h) * d.W;
        for (int64_t w = 0; w < d.W; ++w) {
          const int64_t wp = w + d.pw;
          row(wp % sw, t + d.pt, h + d.ph)[wp / sw] = src[w];
        }
      }
  }
  void store_add(const ConvDims& d, double* plane) const {
    for (int64_t t = 0; t < d.T; ++t)
      for (int64_t h = 0; h < d.H; ++h) {
        double* dst = plane + (t * d.H + h) * d.W;
        for (int64_t w = 0; w < d.W; ++w) {
          const int64_t wp = w + d.pw;
          dst[w] += data[(((wp % sw) * Tp + t + d.pt) * Hp + h + d.ph) * Ws + wp / sw];
        }
      }
  }
};

inline void conv_fwd(const ConvDims& d, const double* x, const double* w, double* out) {
  const int64_t P = d.To * d.Ho * d.Wo;
  if (pointwise(d)) {
    for (int64_t n = 0; n < d.N; ++n)
      for (int64_t k = 0; k < d.K; ++k) {
        double* o = out + (n * d.K + k) * P;
        for (int64_t c = 0; c < d.C; ++c) {
          const double wv = w[k * d.C + c];
          if (wv == 0.0) continue;
          const double* xr = x + (n * d.C + c) * P;
          for (int64_t p = 0; p < P; ++p) o[p] += wv * xr[p];
        }
      }
    return;
  }
  ConvScratch s;
  s.resize(d);
  const int64_t taps = d.kt * d.kh * d.kw;
  for (int64_t n = 0; n < d.N; ++n)
    for (int64_t c = 0; c < d.C; ++c) {
      s.load(d, x + (n * d.C + c) * d.T * d.H * d.W);
      double* ob = out + n * d.K * P;
      const double* wb = w + c * taps;  // weight for (k,c) at wb + k*C*taps
      for (int64_t to = 0; to < d.To; ++to)
        for (int64_t ki = 0; ki < d.kt; ++ki) {
          const int64_t t = to * d.st + ki;
          for (int64_t ho = 0; ho < d.Ho; ++ho) {
            const int64_t orow_off = (to * d.Ho + ho) * d.Wo;
            for (int64_t kj = 0; kj < d.kh; ++kj) {
              const int64_t h = ho * d.sh + kj;
              for (int64_t kk = 0; kk < d.kw; ++kk) {
                const int64_t tap = (ki * d.kh + kj) * d.kw + kk;
                const double* xs = s.row(kk % d.sw, t, h) + kk / d.sw;
                for (int64_t k = 0; k < d.K; ++k) {
                  const double wv = wb[k * d.C * taps + tap];
                  double* orow = ob + k * P + orow_off;
                  for (int64_t wo = 0; wo < d.Wo; ++wo) orow[wo] += wv * xs[wo];
                }
              }
            }
          }
        }
    }
}

inline void conv_dx(const ConvDims& d, const double* w, const double* gout, double* dx) {
  const int64_t P = d.To * d.Ho * d.Wo;
  if (pointwise(d)) {
    for (int64_t n = 0; n < d.N; ++n)
      for (int64_t c = 0; c < d.C; ++c) {
        double* dr = dx + (n * d.C + c) * P;
        for (int64_t k = 0; k < d.K; ++k) {
          const double wv = w[k * d.C + c];
          if (wv == 0.0) continue;
          const double* g = gout + (n * d.K + k) * P;
          for (int64_t p = 0; p < P; ++p) dr[p] += wv * g[p];
        }
      }
    return;
  }
  ConvScratch s;
  s.resize(d);
  const int64_t taps = d.kt * d.kh * d.kw;
  for (int64_t n = 0; n < d.N; ++n)
    for (int64_t c = 0; c < d.C; ++c) {
      std::fill(s.data.begin(), s.data.end(), 0.0);
      const double* gb = gout + n * d.K * P;
      const double* wb = w + c * taps;
      for (int64_t to = 0; to < d.To; ++to)
        for (int64_t ki = 0; ki < d.kt; ++ki) {
          const int64_t t = to * d.st + ki;
          for (int64_t ho = 0; ho < d.Ho; ++ho) {
            const int64_t grow_off = (to * d.Ho + ho) * d.Wo;
            for (int64_t kj = 0; kj < d.kh; ++kj) {
              const int64_t h = ho * d.sh + kj;
              for (int64_t kk = 0; kk < d.kw; ++kk) {
                const int64_t tap = (ki * d.kh + kj) * d.kw + kk;
                double* xs = s.row(kk % d.sw, t, h) + kk / d.sw;
                for (int64_t k = 0; k < d.K; ++k) {
                  const double wv = wb[k * d.C * taps + tap];
                  const double* grow = gb + k * P + grow_off;
                  for (int64_t wo = 0; wo < d.Wo; ++wo) xs[wo] += wv * grow[wo];
                }
              }
            }
          }
        }
      s.store_add(d, dx + (n * d.C + c) * d.T * d.H * d.W);
    }
}

inline void conv_dw(const ConvDims& d, const double* x, const double* gout, double* dw) {
  const int64_t P = d.To * d.Ho * d.Wo;
  if (pointwise(d)) {
    for (int64_t n = 0; n < d.N; ++n)
      for (int64_t k = 0; k < d.K; ++k) {
        const double* g = gout + (n * d.K + k) * P;
        for (int64_t c = 0; c < d.C; ++c) {
          const double* xr = x + (n * d.C + c) * P;
          double acc = 0.0;
          for (int64_t p = 0; p < P; ++p) acc += g[p] * xr[p];
          dw[k * d.C + c] += acc;
        }
      }
    return;
  }
  ConvScratch s;
  s.resize(d);
  const int64_t taps = d.kt * d.kh * d.kw;
  std::vector<double> acc(static_cast<size_t>(d.K * taps));
  for (int64_t n = 0; n < d.N; ++n)
    for (int64_t c = 0; c < d.C; ++c) {
      s.load(d, x + (n * d.C + c) * d.T * d.H * d.W);
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* gb = gout + n * d.K * P;
      for (int64_t to = 0; to < d.To; ++to)
        for (int64_t ki = 0; ki < d.kt; ++ki) {
          const int64_t t = to * d.st + ki;
          for (int64_t ho = 0; ho < d.Ho; ++ho) {
            const int64_t grow_off = (to * d.Ho + ho) * d.Wo;
            for (int64_t kj = 0; kj < d.kh; ++kj) {
              const int64_t h = ho * d.sh + kj;
              for (int64_t kk = 0; kk < d.kw; ++kk) {
                const int64_t tap = (ki * d.kh + kj) * d.kw + kk;
                const double* xs = s.row(kk % d.sw, t, h) + kk / d.sw;
                for (int64_t k = 0; k < d.K; ++k) {
                  const double* grow = gb + k * P + grow_off;
                  double a = 0.0;
                  for (int64_t wo = 0; wo < d.Wo; ++wo) a += grow[wo] * xs[wo];
                  acc[static_cast<size_t>(k * taps + tap)] += a;
                }
              }
            }
          }
        }
      for (int64_t k = 0; k < d.K; ++k)
        for (int64_t tap = 0; tap < taps; ++tap)
          dw[(k * d.C + c) * taps + tap] += acc[static_cast<size_t>(k * taps + tap)];
    }
}

}  // namespace detail

struct Stride3 {
  int64_t t = 1, h = 1, w = 1;
};
struct Pad3 {
  int64_t t = 0, h = 0, w = 0;
};

// 3-D convolution, bias-free. input [N,C,T,H,W], kernel [K,C,kt,kh,kw].
inline Tensor conv3d(const Tensor& input, const Tensor& kernel, Stride3 stride, Pad3 pad) {
  if (input.rank() != 5 || kernel.rank() != 5)
    throw std::invalid_argument("conv3d: expects input rank 5 and kernel rank 5, got input " +
                                shape_str(input.shape()) + " kernel " + shape_str(kernel.shape()));
  if (input.dim(1) != kernel.dim(1))
    throw std::invalid_argument("conv3d: channel mismatch, input " + shape_str(input.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  if (stride.t < 1 || stride.h < 1 || stride.w < 1) throw std::invalid_argument("conv3d: strides must be >= 1");
  detail::ConvDims d;
  d.N = input.dim(0);
  d.C = input.dim(1);
  d.T = input.dim(2);
  d.H = input.dim(3);
  d.W = input.dim(4);
  d.K = kernel.dim(0);
  d.kt = kernel.dim(2);
  d.kh = kernel.dim(3);
  d.kw = kernel.dim(4);
  d.st = stride.t;
  d.sh = stride.h;
  d.sw = stride.w;
  d.pt = pad.t;
  d.ph = pad.h;
  d.pw = pad.w;
  d.To = detail::out_extent(d.T, d.kt, d.st, d.pt, "conv3d", "t");
  d.Ho = detail::out_extent(d.H, d.kh, d.sh, d.ph, "conv3d", "h");
  d.Wo = detail::out_extent(d.W, d.kw, d.sw, d.pw, "conv3d", "w");

  Tensor out = Tensor::zeros({d.N, d.K, d.To, d.Ho, d.Wo});
  detail::conv_fwd(d, input.data(), kernel.data(), out.data());

  Tensor in = input, ker = kernel;
  tape(out, "conv3d", {input, kernel}, [d, in, ker](const std::vector<double>& g) mutable {
    if (in.requires_grad()) detail::conv_dx(d, ker.data(), g.data(), in.grad().data());
    if (ker.requires_grad()) detail::conv_dw(d, in.data(), g.data(), ker.grad().data());
  });
  return out;
}

struct Stride2 {
  int64_t f = 1, t = 1;
};
struct Pad2 {
  int64_t f = 0, t = 0;
};

// 2-D convolution on frequency x time planes. input [N,C,F,T], kernel [K,C,kf,kt].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, Stride2 stride, Pad2 pad) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: expects input rank 4 and kernel rank 4, got input " +
                                shape_str(input.shape()) + " kernel " + shape_str(kernel.shape()));
  if (input.dim(1) != kernel.dim(1))
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  if (stride.f < 1 || stride.t < 1) throw std::invalid_argument("conv2d: strides must be >= 1");
  detail::ConvDims d;
  d.N = input.dim(0);
  d.C = input.dim(1);
  d.T = 1;
  d.H = input.dim(2);
  d.W = input.dim(3);
  d.K = kernel.dim(0);
  d.kt = 1;
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.st = 1;
  d.sh = stride.f;
  d.sw = stride.t;
  d.pt = 0;
  d.ph = pad.f;
  d.pw = pad.t;
  d.To = 1;
  d.Ho = detail::out_extent(d.H, d.kh, d.sh, d.ph, "conv2d", "f");
  d.Wo = detail::out_extent(d.W, d.kw, d.sw, d.pw, "conv2d", "t");

  Tensor out = Tensor::zeros({d.N, d.K, d.Ho, d.Wo});
  detail::conv_fwd(d, input.data(), kernel.data(), out.data());

  Tensor in = input, ker = kernel;
  tape(out, "conv2d", {input, kernel}, [d, in, ker](const std::vector<double>& g) mutable {
    if (in.requires_grad()) detail::conv_dx(d, ker.data(), g.data(), in.grad().data());
    if (ker.requires_grad()) detail::conv_dw(d, in.data(), g.data(), ker.grad().data());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis (axis 1).
// ---------------------------------------------------------------------------

struct BnState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  int64_t batches_tracked = 0;

  explicit BnState(int64_t channels = 0, double momentum_ = 0.1, double eps_ = 1e-5)
      : running_mean(channels, 0.0), running_var(channels, 1.0), momentum(momentum_), eps(eps_) {}
};

inline Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BnState& state,
                         Mode mode) {
  if (input.rank() < 2) throw std::invalid_argument("batch_norm: input must have a channel axis");
  const int64_t N = input.dim(0);
  const int64_t C = input.dim(1);
  int64_t R = 1;
  for (size_t i = 2; i < input.rank(); ++i) R *= input.dim(i);
  if (gamma.size() != C || beta.size() != C)
    throw std::invalid_argument("batch_norm: gamma/beta length " + std::to_string(gamma.size()) + "/" +
                                std::to_string(beta.size()) + " does not match channel count " +
                                std::to_string(C));
  if (static_cast<int64_t>(state.running_mean.size()) != C)
    throw std::invalid_argument("batch_norm: state size mismatch");
  if (mode == Mode::eval && state.batches_tracked == 0)
    throw std::runtime_error("batch_norm: eval mode before any batch statistics were recorded");

  const double eps = state.eps;
  const int64_t M = N * R;
  std::vector<double> mean(C), inv_std(C);
  if (mode == Mode::train) {
    for (int64_t c = 0; c < C; ++c) {
      double m = 0.0, sq = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* row = input.data() + (n * C + c) * R;
        for (int64_t r = 0; r < R; ++r) {
          m += row[r];
          sq += row[r] * row[r];
        }
      }
      m /= static_cast<double>(M);
      double var = sq / static_cast<double>(M) - m * m;
      if (var < 0) var = 0;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    state.batches_tracked++;
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* xr = input.data() + (n * C + c) * R;
      double* orow = out.data() + (n * C + c) * R;
      const double g = gamma.data()[c], b = beta.data()[c], m = mean[c], is = inv_std[c];
      for (int64_t r = 0; r < R; ++r) orow[r] = (xr[r] - m) * is * g + b;
    }

  Tensor in = input, ga = gamma, be = beta;
  bool train_mode = mode == Mode::train;
  tape(out, "batch_norm", {input, gamma, beta},
       [in, ga, be, mean, inv_std, N, C, R, train_mode](const std::vector<double>& g) mutable {
         const int64_t M = N * R;
         for (int64_t c = 0; c < C; ++c) {
           const double m = mean[c], is = inv_std[c], gm = ga.data()[c];
           double sum_g = 0.0, sum_gx = 0.0;
           for (int64_t n = 0; n < N; ++n) {
             const double* xr = in.data() + (n * C + c) * R;
             const double* gr = g.data() + (n * C + c) * R;
             for (int64_t r = 0; r < R; ++r) {
               sum_g += gr[r];
               sum_gx += gr[r] * (xr[r] - m) * is;
             }
           }
           if (ga.requires_grad()) ga.grad()[c] += sum_gx;
           if (be.requires_grad()) be.grad()[c] += sum_g;
           if (in.requires_grad()) {
             const double mg = sum_g / static_cast<double>(M);
             const double mgx = sum_gx / static_cast<double>(M);
             for (int64_t n = 0; n < N; ++n) {
               const double* xr = in.data() + (n * C + c) * R;
               const double* gr = g.data() + (n * C + c) * R;
               double* dr = in.grad().data() + (n * C + c) * R;
               if (train_mode) {
                 for (int64_t r = 0; r < R; ++r) {
                   const double xhat = (xr[r] - m) * is;
                   dr[r] += gm * is * (gr[r] - mg - xhat * mgx);
                 }
               } else {
                 for (int64_t r = 0; r < R; ++r) dr[r] += gm * is * gr[r];
               }
             }
           }
         }
       });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops.
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] > 0 ? x.data()[i] : 0.0;
  Tensor in = x;
  tape(out, "relu", {x}, [in](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (size_t i = 0; i < g.size(); ++i)
      if (in.data()[i] > 0) d[i] += g[i];
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  Tensor ta = a, tb = b;
  tape(out, "add", {a, b}, [ta, tb](const std::vector<double>& g) mutable {
    if (ta.requires_grad()) {
      double* d = ta.grad().data();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tb.requires_grad()) {
      double* d = tb.grad().data();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  Tensor ta = a, tb = b;
  tape(out, "mul", {a, b}, [ta, tb](const std::vector<double>& g) mutable {
    if (ta.requires_grad()) {
      double* d = ta.grad().data();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * tb.data()[i];
    }
    if (tb.requires_grad()) {
      double* d = tb.grad().data();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ta.data()[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  Tensor in = x;
  tape(out, "scale", {x}, [in, c](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * c;
  });
  return out;
}

// Per-sample scalar multiply on axis 0; no gradient flows into the scales.
// Used for DropPathway masking so dropped clips contribute exact zeros.
inline Tensor scale_rows(const Tensor& x, const std::vector<double>& row_scales) {
  if (x.dim(0) != static_cast<int64_t>(row_scales.size()))
    throw std::invalid_argument("scale_rows: " + std::to_string(row_scales.size()) + " scales for batch " +
                                std::to_string(x.dim(0)));
  const int64_t N = x.dim(0);
  const int64_t R = x.size() / N;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t n = 0; n < N; ++n) {
    const double s = row_scales[n];
    const double* xr = x.data() + n * R;
    double* o = out.data() + n * R;
    for (int64_t r = 0; r < R; ++r) o[r] = xr[r] * s;
  }
  Tensor in = x;
  tape(out, "scale_rows", {x}, [in, row_scales, N, R](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t n = 0; n < N; ++n) {
      const double s = row_scales[n];
      for (int64_t r = 0; r < R; ++r) d[n * R + r] += g[n * R + r] * s;
    }
  });
  return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  int64_t total_c = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size())
      throw std::invalid_argument("concat_channels: rank mismatch " + shape_str(p.shape()) + " vs " +
                                  shape_str(first));
    for (size_t i = 0; i < first.size(); ++i)
      if (i != 1 && p.shape()[i] != first[i])
        throw std::invalid_argument("concat_channels: non-channel extent mismatch " + shape_str(p.shape()) +
                                    " vs " + shape_str(first));
    total_c += p.dim(1);
  }
  const int64_t N = first[0];
  int64_t R = 1;
  for (size_t i = 2; i < first.size(); ++i) R *= first[i];
  Shape out_shape = first;
  out_shape[1] = total_c;
  Tensor out = Tensor::zeros(out_shape);
  int64_t c_off = 0;
  for (const Tensor& p : parts) {
    const int64_t C = p.dim(1);
    for (int64_t n = 0; n < N; ++n)
      std::copy(p.data() + n * C * R, p.data() + (n + 1) * C * R, out.data() + (n * total_c + c_off) * R);
    c_off += C;
  }
  std::vector<Tensor> inputs = parts;
  tape(out, "concat_channels", parts, [inputs, N, R, total_c](const std::vector<double>& g) mutable {
    int64_t c_off = 0;
    for (Tensor& p : inputs) {
      const int64_t C = p.dim(1);
      if (p.requires_grad()) {
        double* d = p.grad().data();
        for (int64_t n = 0; n < N; ++n) {
          const double* gs = g.data() + (n * total_c + c_off) * R;
          double* ds = d + n * C * R;
          for (int64_t i = 0; i < C * R; ++i) ds[i] += gs[i];
        }
      }
      c_off += C;
    }
  });
  return out;
}

inline Tensor max_pool3d(const Tensor& x, Stride3 kernel, Stride3 stride, Pad3 pad) {
  if (x.rank() != 5) throw std::invalid_argument("max_pool3d: expects rank 5, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t To = detail::out_extent(T, kernel.t, stride.t, pad.t, "max_pool3d", "t");
  const int64_t Ho = detail::out_extent(H, kernel.h, stride.h, pad.h, "max_pool3d", "h");
  const int64_t Wo = detail::out_extent(W, kernel.w, stride.w, pad.w, "max_pool3d", "w");
  Tensor out = Tensor::zeros({N, C, To, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C * To * Ho * Wo));
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* xb = x.data() + (n * C + c) * T * H * W;
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo, ++oi) {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_i = -1;
            for (int64_t ki = 0; ki < kernel.t; ++ki) {
              const int64_t t = to * stride.t - pad.t + ki;
              if (t < 0 || t >= T) continue;
              for (int64_t kj = 0; kj < kernel.h; ++kj) {
                const int64_t h = ho * stride.h - pad.h + kj;
                if (h < 0 || h >= H) continue;
                for (int64_t kk = 0; kk < kernel.w; ++kk) {
                  const int64_t w = wo * stride.w - pad.w + kk;
                  if (w < 0 || w >= W) continue;
                  const int64_t idx = (t * H + h) * W + w;
                  if (xb[idx] > best) {
                    best = xb[idx];
                    best_i = idx;
                  }
                }
              }
            }
            if (best_i < 0) throw std::invalid_argument("max_pool3d: empty pooling window");
            out.data()[oi] = best;
            (*argmax)[static_cast<size_t>(oi)] = (n * C + c) * T * H * W + best_i;
          }
    }
  Tensor in = x;
  tape(out, "max_pool3d", {x}, [in, argmax](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (size_t i = 0; i < g.size(); ++i) d[(*argmax)[i]] += g[i];
  });
  return out;
}

// Mean over every axis after the channel axis: [N,C,...] -> [N,C].
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 3) throw std::invalid_argument("global_avg_pool: expects rank >= 3, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1);
  int64_t R = 1;
  for (size_t i = 2; i < x.rank(); ++i) R *= x.dim(i);
  Tensor out = Tensor::zeros({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* xr = x.data() + nc * R;
    double acc = 0.0;
    for (int64_t r = 0; r < R; ++r) acc += xr[r];
    out.data()[nc] = acc / static_cast<double>(R);
  }
  Tensor in = x;
  tape(out, "global_avg_pool", {x}, [in, N, C, R](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    const double inv = 1.0 / static_cast<double>(R);
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const double gv = g[nc] * inv;
      for (int64_t r = 0; r < R; ++r) d[nc * R + r] += gv;
    }
  });
  return out;
}

// Mean over a single axis, removing it.
inline Tensor mean_axis(const Tensor& x, size_t axis) {
  if (axis >= x.rank()) throw std::invalid_argument("mean_axis: axis out of range");
  int64_t outer = 1, inner = 1;
  const int64_t L = x.dim(axis);
  for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  Tensor out = Tensor::zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < L; ++l) {
      const double* xr = x.data() + (o * L + l) * inner;
      double* orow = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) orow[i] += xr[i];
    }
  const double inv = 1.0 / static_cast<double>(L);
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= inv;
  Tensor in = x;
  tape(out, "mean_axis", {x}, [in, outer, inner, L, inv](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < L; ++l) {
        double* dr = d + (o * L + l) * inner;
        const double* gr = g.data() + o * inner;
        for (int64_t i = 0; i < inner; ++i) dr[i] += gr[i] * inv;
      }
  });
  return out;
}

// Broadcast [N,C,T] over a spatial grid: out[n,c,t,h,w] = x[n,c,t].
inline Tensor tile_spatial(const Tensor& x, int64_t H, int64_t W) {
  if (x.rank() != 3) throw std::invalid_argument("tile_spatial: expects rank 3, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), T = x.dim(2);
  Tensor out = Tensor::zeros({N, C, T, H, W});
  const int64_t S = H * W;
  for (int64_t i = 0; i < N * C * T; ++i) {
    const double v = x.data()[i];
    double* o = out.data() + i * S;
    for (int64_t s = 0; s < S; ++s) o[s] = v;
  }
  Tensor in = x;
  tape(out, "tile_spatial", {x}, [in, S](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t i = 0; i < in.size(); ++i) {
      const double* gr = g.data() + i * S;
      double acc = 0.0;
      for (int64_t s = 0; s < S; ++s) acc += gr[s];
      d[i] += acc;
    }
  });
  return out;
}

// Nearest-neighbour temporal upsample of [N,C,T] by an integer factor.
inline Tensor repeat_temporal(const Tensor& x, int64_t factor) {
  if (x.rank() != 3) throw std::invalid_argument("repeat_temporal: expects rank 3, got " + shape_str(x.shape()));
  if (factor < 1) throw std::invalid_argument("repeat_temporal: factor must be >= 1");
  const int64_t N = x.dim(0), C = x.dim(1), T = x.dim(2);
  Tensor out = Tensor::zeros({N, C, T * factor});
  for (int64_t i = 0; i < N * C; ++i)
    for (int64_t t = 0; t < T; ++t) {
      const double v = x.data()[i * T + t];
      for (int64_t r = 0; r < factor; ++r) out.data()[(i * T + t) * factor + r] = v;
    }
  Tensor in = x;
  tape(out, "repeat_temporal", {x}, [in, factor, N, C, T](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t i = 0; i < N * C; ++i)
      for (int64_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int64_t r = 0; r < factor; ++r) acc += g[(i * T + t) * factor + r];
        d[i * T + t] += acc;
      }
  });
  return out;
}

// Broadcast [N,C] over a full spatiotemporal grid: out[n,c,t,h,w] = x[n,c].
inline Tensor broadcast_feature(const Tensor& x, int64_t T, int64_t H, int64_t W) {
  if (x.rank() != 2) throw std::invalid_argument("broadcast_feature: expects rank 2, got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t S = T * H * W;
  Tensor out = Tensor::zeros({N, C, T, H, W});
  for (int64_t i = 0; i < N * C; ++i) {
    const double v = x.data()[i];
    double* o = out.data() + i * S;
    for (int64_t s = 0; s < S; ++s) o[s] = v;
  }
  Tensor in = x;
  tape(out, "broadcast_feature", {x}, [in, S](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t i = 0; i < in.size(); ++i) {
      const double* gr = g.data() + i * S;
      double acc = 0.0;
      for (int64_t s = 0; s < S; ++s) acc += gr[s];
      d[i] += acc;
    }
  });
  return out;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                                " changes element count");
  Tensor out = Tensor::from(new_shape, x.values());
  Tensor in = x;
  tape(out, "reshape", {x}, [in](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
  return out;
}

inline Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2)
    throw std::invalid_argument("fully_connected: expects x [N,Cin] and weight [Cout,Cin], got " +
                                shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  const int64_t N = x.dim(0), Cin = x.dim(1), Cout = weight.dim(0);
  if (weight.dim(1) != Cin || bias.size() != Cout)
    throw std::invalid_argument("fully_connected: weight " + shape_str(weight.shape()) + " bias " +
                                shape_str(bias.shape()) + " incompatible with input " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({N, Cout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < Cout; ++k) {
      const double* xr = x.data() + n * Cin;
      const double* wr = weight.data() + k * Cin;
      double acc = bias.data()[k];
      for (int64_t c = 0; c < Cin; ++c) acc += wr[c] * xr[c];
      out.data()[n * Cout + k] = acc;
    }
  Tensor in = x, w = weight, b = bias;
  tape(out, "fully_connected", {x, weight, bias}, [in, w, b, N, Cin, Cout](const std::vector<double>& g) mutable {
    if (in.requires_grad()) {
      double* d = in.grad().data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t k = 0; k < Cout; ++k) {
          const double gv = g[n * Cout + k];
          const double* wr = w.data() + k * Cin;
          for (int64_t c = 0; c < Cin; ++c) d[n * Cin + c] += gv * wr[c];
        }
    }
    if (w.requires_grad()) {
      double* d = w.grad().data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t k = 0; k < Cout; ++k) {
          const double gv = g[n * Cout + k];
          const double* xr = in.data() + n * Cin;
          for (int64_t c = 0; c < Cin; ++c) d[k * Cin + c] += gv * xr[c];
        }
    }
    if (b.requires_grad()) {
      double* d = b.grad().data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t k = 0; k < Cout; ++k) d[k] += g[n * Cout + k];
    }
  });
  return out;
}

// Inverted dropout: kept activations scale by 1/(1-rate) in train mode so
// eval mode is the identity.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) {
    Tensor out = Tensor::from(x.shape(), x.values());
    Tensor in = x;
    tape(out, "dropout", {x}, [in](const std::vector<double>& g) mutable {
      if (!in.requires_grad()) return;
      double* d = in.grad().data();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
    return out;
  }
  const double keep = 1.0 - rate;
  const double inv = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
  for (auto& m : *mask) m = rng.bernoulli(keep) ? inv : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
  Tensor in = x;
  tape(out, "dropout", {x}, [in, mask](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*mask)[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(N));
  for (int64_t l : labels)
    if (l < 0 || l >= K)
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                                  std::to_string(K) + ")");
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N * K));
  double loss = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const double* z = logits.data() + n * K;
    double mx = z[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    double denom = 0.0;
    for (int64_t k = 0; k < K; ++k) denom += std::exp(z[k] - mx);
    const double log_denom = std::log(denom) + mx;
    for (int64_t k = 0; k < K; ++k) (*probs)[static_cast<size_t>(n * K + k)] = std::exp(z[k] - log_denom);
    loss += log_denom - z[labels[n]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(N));
  Tensor in = logits;
  tape(out, "softmax_cross_entropy", {logits}, [in, probs, labels, N, K](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    const double gv = g[0] / static_cast<double>(N);
    double* d = in.grad().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k)
        d[n * K + k] += gv * ((*probs)[static_cast<size_t>(n * K + k)] - (labels[n] == k ? 1.0 : 0.0));
  });
  return out;
}

// Binary cross-entropy on logits, mean over all elements. Targets in [0,1].
inline Tensor sigmoid_bce(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.size())
    throw std::invalid_argument("sigmoid_bce: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(logits.size()) + " logits");
  for (double t : targets)
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("sigmoid_bce: target out of [0,1]");
  const int64_t M = logits.size();
  double loss = 0.0;
  for (int64_t i = 0; i < M; ++i) {
    const double z = logits.data()[i], y = targets[static_cast<size_t>(i)];
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(M));
  Tensor in = logits;
  tape(out, "sigmoid_bce", {logits}, [in, targets, M](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    const double gv = g[0] / static_cast<double>(M);
    double* d = in.grad().data();
    for (int64_t i = 0; i < M; ++i) {
      const double z = in.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-z));
      d[i] += gv * (s - targets[static_cast<size_t>(i)]);
    }
  });
  return out;
}

// Weighted-mean BCE on logits: sum_i w_i * bce_i / sum_i w_i. A zero total
// weight yields a constant zero loss (no gradient).
inline Tensor sigmoid_bce_weighted(const Tensor& logits, const std::vector<double>& targets,
                                   const std::vector<double>& weights) {
  if (static_cast<int64_t>(targets.size()) != logits.size() || weights.size() != targets.size())
    throw std::invalid_argument("sigmoid_bce_weighted: size mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  const int64_t M = logits.size();
  double loss = 0.0;
  for (int64_t i = 0; i < M; ++i) {
    const double z = logits.data()[i], y = targets[static_cast<size_t>(i)];
    loss += weights[static_cast<size_t>(i)] *
            (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
  }
  Tensor out = Tensor::scalar(loss / wsum);
  Tensor in = logits;
  tape(out, "sigmoid_bce_weighted", {logits}, [in, targets, weights, wsum, M](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    const double gv = g[0] / wsum;
    double* d = in.grad().data();
    for (int64_t i = 0; i < M; ++i) {
      const double z = in.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-z));
      d[i] += gv * weights[static_cast<size_t>(i)] * (s - targets[static_cast<size_t>(i)]);
    }
  });
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(acc);
  Tensor in = x;
  tape(out, "sum_all", {x}, [in](const std::vector<double>& g) mutable {
    if (!in.requires_grad()) return;
    double* d = in.grad().data();
    for (int64_t i = 0; i < in.size(); ++i) d[i] += g[0];
  });
  return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Global attention: one query per batch row over P positions.
// e[n,p] = <q[n,:], k[n,:,p]>, a = softmax_p(e), out[n,i] = sum_p a[n,p] v[n,i,p].
// ---------------------------------------------------------------------------

inline Tensor attend_global(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 3 || v.rank() != 3)
    throw std::invalid_argument("attend_global: expects q [N,C], k [N,C,P], v [N,C,P]");
  const int64_t N = q.dim(0), C = q.dim(1), P = k.dim(2);
  if (k.dim(0) != N || k.dim(1) != C || v.dim(0) != N || v.dim(1) != C || v.dim(2) != P)
    throw std::invalid_argument("attend_global: shape mismatch q " + shape_str(q.shape()) + " k " +
                                shape_str(k.shape()) + " v " + shape_str(v.shape()));
  auto alpha = std::make_shared<std::vector<double>>(static_cast<size_t>(N * P));
  Tensor out = Tensor::zeros({N, C});
  for (int64_t n = 0; n < N; ++n) {
    const double* qr = q.data() + n * C;
    const double* kb = k.data() + n * C * P;
    std::vector<double> e(static_cast<size_t>(P), 0.0);
    for (int64_t c = 0; c < C; ++c) {
      const double qv = qr[c];
      const double* krow = kb + c * P;
      for (int64_t p = 0; p < P; ++p) e[static_cast<size_t>(p)] += qv * krow[p];
    }
    double mx = e[0];
    for (int64_t p = 1; p < P; ++p) mx = std::max(mx, e[static_cast<size_t>(p)]);
    double denom = 0.0;
    for (int64_t p = 0; p < P; ++p) denom += std::exp(e[static_cast<size_t>(p)] - mx);
    for (int64_t p = 0; p < P; ++p) (*alpha)[static_cast<size_t>(n * P + p)] = std::exp(e[static_cast<size_t>(p)] - mx) / denom;
    const double* vb = v.data() + n * C * P;
    double* orow = out.data() + n * C;
    for (int64_t c = 0; c < C; ++c) {
      const double* vrow = vb + c * P;
      double acc = 0.0;
      for (int64_t p = 0; p < P; ++p) acc += (*alpha)[static_cast<size_t>(n * P + p)] * vrow[p];
      orow[c] = acc;
    }
  }
  Tensor tq = q, tk = k, tv = v;
  tape(out, "attend_global", {q, k, v}, [tq, tk, tv, alpha, N, C, P](const std::vector<double>& g) mutable {
    for (int64_t n = 0; n < N; ++n) {
      const double* gr = g.data() + n * C;
      const double* a = alpha->data() + n * P;
      const double* vb = tv.data() + n * C * P;
      const double* kb = tk.data() + n * C * P;
      const double* qr = tq.data() + n * C;
      // d_alpha[p] = sum_c g[c] v[c,p]; d_e via softmax jacobian.
      std::vector<double> da(static_cast<size_t>(P), 0.0);
      for (int64_t c = 0; c < C; ++c) {
        const double gv = gr[c];
        const double* vrow = vb + c * P;
        for (int64_t p = 0; p < P; ++p) da[static_cast<size_t>(p)] += gv * vrow[p];
      }
      double dot = 0.0;
      for (int64_t p = 0; p < P; ++p) dot += a[p] * da[static_cast<size_t>(p)];
      std::vector<double> de(static_cast<size_t>(P));
      for (int64_t p = 0; p < P; ++p) de[static_cast<size_t>(p)] = a[p] * (da[static_cast<size_t>(p)] - dot);
      if (tv.requires_grad()) {
        double* dv = tv.grad().data() + n * C * P;
        for (int64_t c = 0; c < C; ++c) {
          const double gv = gr[c];
          double* dvr = dv + c * P;
          for (int64_t p = 0; p < P; ++p) dvr[p] += gv * a[p];
        }
      }
      if (tq.requires_grad()) {
        double* dq = tq.grad().data() + n * C;
        for (int64_t c = 0; c < C; ++c) {
          const double* krow = kb + c * P;
          double acc = 0.0;
          for (int64_t p = 0; p < P; ++p) acc += de[static_cast<size_t>(p)] * krow[p];
          dq[c] += acc;
        }
      }
      if (tk.requires_grad()) {
        double* dk = tk.grad().data() + n * C * P;
        for (int64_t c = 0; c < C; ++c) {
          const double qv = qr[c];
          double* dkr = dk + c * P;
          for (int64_t p = 0; p < P; ++p) dkr[p] += de[static_cast<size_t>(p)] * qv;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Non-taped utilities for data handling and evaluation.
// ---------------------------------------------------------------------------

inline void softmax_row(const double* z, int64_t k, double* out) {
  double mx = z[0];
  for (int64_t i = 1; i < k; ++i) mx = std::max(mx, z[i]);
  double denom = 0.0;
  for (int64_t i = 0; i < k; ++i) denom += std::exp(z[i] - mx);
  for (int64_t i = 0; i < k; ++i) out[i] = std::exp(z[i] - mx) / denom;
}

inline int64_t argmax(const double* v, int64_t n) {
  int64_t best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Rotate the last two (square) axes counterclockwise by quarter turns.
inline Tensor rotate90(const Tensor& x, int quarter_turns) {
  if (x.rank() < 2) throw std::invalid_argument("rotate90: expects rank >= 2");
  const int64_t W = x.dim(x.rank() - 1);
  const int64_t H = x.dim(x.rank() - 2);
  if (H != W)
    throw std::invalid_argument("rotate90: spatial extent " + std::to_string(H) + "x" + std::to_string(W) +
                                " is not square");
  const int k = ((quarter_turns % 4) + 4) % 4;
  const int64_t planes = x.size() / (H * W);
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * H * W;
    double* dst = out.data() + pl * H * W;
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        int64_t si = i, sj = j;
        switch (k) {  // destination (i,j) pulled from source
          case 0: break;
          case 1: si = j; sj = W - 1 - i; break;
          case 2: si = H - 1 - i; sj = W - 1 - j; break;
          case 3: si = H - 1 - j; sj = i; break;
        }
        dst[i * W + j] = src[si * W + sj];
      }
  }
  return out;
}

// Pick `count` frames starting at `offset` with the given stride from a
// [C,T,H,W] clip.
inline Tensor sample_frames(const Tensor& video, int64_t offset, int64_t stride, int64_t count) {
  if (video.rank() != 4) throw std::invalid_argument("sample_frames: expects [C,T,H,W]");
  const int64_t C = video.dim(0), T = video.dim(1), H = video.dim(2), W = video.dim(3);
  if (offset < 0 || offset + (count - 1) * stride >= T)
    throw std::invalid_argument("sample_frames: window [" + std::to_string(offset) + "," +
                                std::to_string(offset + (count - 1) * stride) + "] outside clip of " +
                                std::to_string(T) + " frames");
  Tensor out = Tensor::zeros({C, count, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < count; ++i)
      std::copy(video.data() + (c * T + offset + i * stride) * H * W,
                video.data() + (c * T + offset + i * stride + 1) * H * W,
                out.data() + (c * count + i) * H * W);
  return out;
}

// Stack same-shaped tensors along a new leading batch axis.
inline Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no inputs");
  const Shape& s = items[0].shape();
  for (const Tensor& t : items)
    if (t.shape() != s) throw std::invalid_argument("stack_batch: shape mismatch");
  Shape out_shape;
  out_shape.push_back(static_cast<int64_t>(items.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out = Tensor::zeros(out_shape);
  const int64_t R = items[0].size();
  for (size_t i = 0; i < items.size(); ++i)
    std::copy(items[i].data(), items[i].data() + R, out.data() + static_cast<int64_t>(i) * R);
  return out;
}

}  // namespace avsf
