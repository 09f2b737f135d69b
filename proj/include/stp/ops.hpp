#pragma once

#include <algorithm>
#include <cmath>

#include "stp/tensor.hpp"

namespace stp {
namespace detail {

// Direct cross-correlation, zero padding, "same" output size.
// One (batch, out-channel) plane per task; inner loop runs over contiguous
// output columns so it vectorizes.
inline void conv_fwd(const float* x, const float* w, const float* bias, float* y,
                     int B, int Cin, int H, int W, int Cout, int K) {
  const int P = (K - 1) / 2;
  parallel_for(int64_t(B) * Cout, int64_t(Cin) * H * W * K * K / 4,
               [&](int64_t lo, int64_t hi) {
    for (int64_t job = lo; job < hi; ++job) {
      const int b = int(job / Cout), co = int(job % Cout);
      float* yb = y + (int64_t(b) * Cout + co) * H * W;
      const float bv = bias ? bias[co] : 0.f;
      std::fill(yb, yb + int64_t(H) * W, bv);
      for (int ci = 0; ci < Cin; ++ci) {
        const float* xc = x + (int64_t(b) * Cin + ci) * H * W;
        const float* wc = w + (int64_t(co) * Cin + ci) * K * K;
        for (int ky = 0; ky < K; ++ky) {
          const int dy = ky - P;
          const int oy0 = std::max(0, -dy), oy1 = std::min(H, H - dy);
          for (int kx = 0; kx < K; ++kx) {
            const float wv = wc[ky * K + kx];
            const int dx = kx - P;
            const int ox0 = std::max(0, -dx), ox1 = std::min(W, W - dx);
            for (int oy = oy0; oy < oy1; ++oy) {
              float* yrow = yb + int64_t(oy) * W;
              const float* xrow = xc + int64_t(oy + dy) * W + dx;
              for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox];
            }
          }
        }
      }
    }
  });
}

// Gradient w.r.t. input: correlation of the output gradient with the
// spatially flipped kernel. Same loop structure as the forward pass.
inline void conv_dgrad(const float* gy, const float* w, float* gx,
                       int B, int Cin, int H, int W, int Cout, int K) {
  const int P = (K - 1) / 2;
  parallel_for(int64_t(B) * Cin, int64_t(Cout) * H * W * K * K / 4,
               [&](int64_t lo, int64_t hi) {
    for (int64_t job = lo; job < hi; ++job) {
      const int b = int(job / Cin), ci = int(job % Cin);
      float* gxb = gx + (int64_t(b) * Cin + ci) * H * W;
      for (int co = 0; co < Cout; ++co) {
        const float* gyc = gy + (int64_t(b) * Cout + co) * H * W;
        const float* wc = w + (int64_t(co) * Cin + ci) * K * K;
        for (int ky = 0; ky < K; ++ky) {
          const int dy = P - ky;
          const int iy0 = std::max(0, -dy), iy1 = std::min(H, H - dy);
          for (int kx = 0; kx < K; ++kx) {
            const float wv = wc[ky * K + kx];
            const int dx = P - kx;
            const int ix0 = std::max(0, -dx), ix1 = std::min(W, W - dx);
            for (int iy = iy0; iy < iy1; ++iy) {
              float* gxrow = gxb + int64_t(iy) * W;
              const float* gyrow = gyc + int64_t(iy + dy) * W + dx;
              for (int ix = ix0; ix < ix1; ++ix) gxrow[ix] += wv * gyrow[ix];
            }
          }
        }
      }
    }
  });
}

// Gradient w.r.t. weights. Accumulates elementwise products into a row
// buffer (vectorizable, fixed order) and reduces it once per tap.
inline void conv_wgrad(const float* x, const float* gy, float* gw,
                       int B, int Cin, int H, int W, int Cout, int K) {
  const int P = (K - 1) / 2;
  parallel_for(int64_t(Cout) * Cin, int64_t(B) * H * W * K * K / 4,
               [&](int64_t lo, int64_t hi) {
    std::vector<float> row(size_t(W));
    for (int64_t job = lo; job < hi; ++job) {
      const int co = int(job / Cin), ci = int(job % Cin);
      float* gwc = gw + (int64_t(co) * Cin + ci) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        const int oy0 = std::max(0, -dy), oy1 = std::min(H, H - dy);
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const int ox0 = std::max(0, -dx), ox1 = std::min(W, W - dx);
          std::fill(row.begin(), row.end(), 0.f);
          for (int b = 0; b < B; ++b) {
            const float* xc = x + (int64_t(b) * Cin + ci) * H * W;
            const float* gyc = gy + (int64_t(b) * Cout + co) * H * W;
            for (int oy = oy0; oy < oy1; ++oy) {
              const float* xrow = xc + int64_t(oy + dy) * W + dx;
              const float* gyrow = gyc + int64_t(oy) * W;
              for (int ox = ox0; ox < ox1; ++ox) row[ox] += xrow[ox] * gyrow[ox];
            }
          }
          double acc = 0.0;
          for (int ox = 0; ox < W; ++ox) acc += row[ox];
          gwc[ky * K + kx] += float(acc);
        }
      }
    }
  });
}

inline int tape_next_id(Tape& t) { return int(t.size()); }

}  // namespace detail

// 2D convolution (cross-correlation), odd kernel, zero padding (k-1)/2,
// output spatial size equals input. Differentiable w.r.t. input, weight
// and the optional per-channel bias.
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w,
                     const Tensor* bias = nullptr) {
  const int B = x.shape.b, Cin = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int Cout = w.shape.b, K = w.shape.h;
  if (w.shape.c != Cin)
    throw shape_error("conv2d: weight expects " + std::to_string(w.shape.c) +
                      " input channels, input has " + std::to_string(Cin));
  if (w.shape.w != K || K % 2 == 0)
    throw shape_error("conv2d: kernel must be square with odd size, got " +
                      w.shape.str());
  if (bias && bias->numel() != Cout)
    throw shape_error("conv2d: bias size must equal output channels");

  Tensor y = Tensor::zeros({B, Cout, H, W});
  detail::conv_fwd(x.ptr(), w.ptr(), bias ? bias->ptr() : nullptr, y.ptr(),
                   B, Cin, H, W, Cout, K);
  if (tape) {
    tape->add_conv_flops(2ll * B * Cout * Cin * H * W * K * K);
    auto xd = x.data, wd = w.data;
    const int xn = x.node, wn = w.node, bn = bias ? bias->node : -1;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      const float* gy = t.grad(self).data();
      if (xn >= 0)
        detail::conv_dgrad(gy, wd->data(), t.grad(xn).data(), B, Cin, H, W, Cout, K);
      if (wn >= 0)
        detail::conv_wgrad(xd->data(), gy, t.grad(wn).data(), B, Cin, H, W, Cout, K);
      if (bn >= 0) {
        float* gb = t.grad(bn).data();
        for (int b = 0; b < B; ++b)
          for (int co = 0; co < Cout; ++co) {
            const float* gyc = gy + (int64_t(b) * Cout + co) * H * W;
            double acc = 0.0;
            for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += gyc[i];
            gb[co] += float(acc);
          }
      }
    });
  }
  return y;
}

// 2x2 max pooling, stride 2. Gradient routes to the window argmax; ties go
// to the first occurrence in row-major scan order.
inline Tensor maxpool2(Tape* tape, const Tensor& x) {
  const int B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  if (H % 2 != 0 || W % 2 != 0)
    throw shape_error("maxpool2: spatial extents must be even, got " + x.shape.str());
  const int Ho = H / 2, Wo = W / 2;
  Tensor y = Tensor::zeros({B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int32_t>>(y.numel());
  const float* xp = x.ptr();
  float* yp = y.ptr();
  int32_t* am = argmax->data();
  parallel_for(int64_t(B) * C, int64_t(H) * W, [&](int64_t lo, int64_t hi) {
    for (int64_t pc = lo; pc < hi; ++pc) {
      const float* xc = xp + pc * H * W;
      float* yc = yp + pc * Ho * Wo;
      int32_t* ac = am + pc * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          int best = (2 * oy) * W + 2 * ox;
          float bv = xc[best];
          const int cand[3] = {2 * oy * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                               (2 * oy + 1) * W + 2 * ox + 1};
          for (int idx : cand)
            if (xc[idx] > bv) { bv = xc[idx]; best = idx; }
          yc[oy * Wo + ox] = bv;
          ac[oy * Wo + ox] = best;
        }
    }
  });
  if (tape) {
    const int xn = x.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      if (xn < 0) return;
      const float* gy = t.grad(self).data();
      float* gx = t.grad(xn).data();
      const int32_t* ac = argmax->data();
      for (int64_t pc = 0; pc < int64_t(B) * C; ++pc)
        for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i)
          gx[pc * H * W + ac[pc * Ho * Wo + i]] += gy[pc * Ho * Wo + i];
    });
  }
  return y;
}

namespace detail {
// Half-pixel sample centers, edges clamped: src = (dst + 0.5)/2 - 0.5.
struct LerpTab {
  std::vector<int> i0, i1;
  std::vector<float> w0, w1;
  explicit LerpTab(int n_in) {
    const int n_out = 2 * n_in;
    i0.resize(n_out); i1.resize(n_out); w0.resize(n_out); w1.resize(n_out);
    for (int d = 0; d < n_out; ++d) {
      float src = (d + 0.5f) / 2.f - 0.5f;
      int lo = int(std::floor(src));
      float t = src - lo;
      int a = std::clamp(lo, 0, n_in - 1);
      int b = std::clamp(lo + 1, 0, n_in - 1);
      i0[d] = a; i1[d] = b; w0[d] = 1.f - t; w1[d] = t;
    }
  }
};
}  // namespace detail

// Bilinear 2x upsampling with half-pixel centers and edge clamping.
inline Tensor upsample_bilinear2(Tape* tape, const Tensor& x) {
  const int B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int Ho = 2 * H, Wo = 2 * W;
  detail::LerpTab ty(H), tx(W);
  Tensor y = Tensor::zeros({B, C, Ho, Wo});
  const float* xp = x.ptr();
  float* yp = y.ptr();
  parallel_for(int64_t(B) * C, int64_t(Ho) * Wo, [&](int64_t lo, int64_t hi) {
    for (int64_t pc = lo; pc < hi; ++pc) {
      const float* xc = xp + pc * H * W;
      float* yc = yp + pc * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const float* r0 = xc + int64_t(ty.i0[oy]) * W;
        const float* r1 = xc + int64_t(ty.i1[oy]) * W;
        const float a = ty.w0[oy], b = ty.w1[oy];
        for (int ox = 0; ox < Wo; ++ox) {
          yc[int64_t(oy) * Wo + ox] =
              a * (tx.w0[ox] * r0[tx.i0[ox]] + tx.w1[ox] * r0[tx.i1[ox]]) +
              b * (tx.w0[ox] * r1[tx.i0[ox]] + tx.w1[ox] * r1[tx.i1[ox]]);
        }
      }
    }
  });
  if (tape) {
    const int xn = x.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      if (xn < 0) return;
      detail::LerpTab ry(H), rx(W);
      const float* gy = t.grad(self).data();
      float* gx = t.grad(xn).data();
      for (int64_t pc = 0; pc < int64_t(B) * C; ++pc) {
        const float* gc = gy + pc * Ho * Wo;
        float* gxc = gx + pc * H * W;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const float g = gc[int64_t(oy) * Wo + ox];
            gxc[int64_t(ry.i0[oy]) * W + rx.i0[ox]] += ry.w0[oy] * rx.w0[ox] * g;
            gxc[int64_t(ry.i0[oy]) * W + rx.i1[ox]] += ry.w0[oy] * rx.w1[ox] * g;
            gxc[int64_t(ry.i1[oy]) * W + rx.i0[ox]] += ry.w1[oy] * rx.w0[ox] * g;
            gxc[int64_t(ry.i1[oy]) * W + rx.i1[ox]] += ry.w1[oy] * rx.w1[ox] * g;
          }
      }
    });
  }
  return y;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(Tape* tape, const Tensor& x, Fwd f, Bwd dfdx_from_out) {
  Tensor y = Tensor::zeros(x.shape);
  const float* xp = x.ptr();
  float* yp = y.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = f(xp[i]);
  if (tape) {
    auto xd = x.data, yd = y.data;
    const int xn = x.node;
    const int self = tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      if (xn < 0) return;
      const float* g = t.grad(self).data();
      float* gx = t.grad(xn).data();
      const float* xv = xd->data();
      const float* yv = yd->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * dfdx_from_out(xv[i], yv[i]);
    });
  }
  return y;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw shape_error(std::string(op) + ": shape mismatch " + a.shape.str() +
                      " vs " + b.shape.str());
}

}  // namespace detail

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
  return detail::unary_op(tape, x,
      [](float v) {
        if (v >= 0.f) return 1.f / (1.f + std::exp(-v));
        float e = std::exp(v);
        return e / (1.f + e);
      },
      [](float, float y) { return y * (1.f - y); });
}

inline Tensor tanh(Tape* tape, const Tensor& x) {
  return detail::unary_op(tape, x, [](float v) { return std::tanh(v); },
                          [](float, float y) { return 1.f - y * y; });
}

inline Tensor abs(Tape* tape, const Tensor& x) {
  return detail::unary_op(tape, x, [](float v) { return std::fabs(v); },
                          [](float v, float) { return v > 0.f ? 1.f : (v < 0.f ? -1.f : 0.f); });
}

inline Tensor scale(Tape* tape, const Tensor& x, float alpha) {
  return detail::unary_op(tape, x, [alpha](float v) { return alpha * v; },
                          [alpha](float, float) { return alpha; });
}

inline Tensor add_scalar(Tape* tape, const Tensor& x, float beta) {
  return detail::unary_op(tape, x, [beta](float v) { return v + beta; },
                          [](float, float) { return 1.f; });
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor y = Tensor::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) (*y.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (tape) {
    const int an = a.node, bn = b.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      const float* g = t.grad(self).data();
      if (an >= 0) {
        float* ga = t.grad(an).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        float* gb = t.grad(bn).data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor y = Tensor::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) (*y.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (tape) {
    const int an = a.node, bn = b.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      const float* g = t.grad(self).data();
      if (an >= 0) {
        float* ga = t.grad(an).data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        float* gb = t.grad(bn).data();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

inline Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "hadamard");
  Tensor y = Tensor::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) (*y.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (tape) {
    auto ad = a.data, bd = b.data;
    const int an = a.node, bn = b.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      const float* g = t.grad(self).data();
      if (an >= 0) {
        float* ga = t.grad(an).data();
        const float* bv = bd->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
      }
      if (bn >= 0) {
        float* gb = t.grad(bn).data();
        const float* av = ad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return y;
}

// Sum over all elements to a scalar tensor. Accumulates in double so the
// result is stable for finite-difference oracles.
inline Tensor sum_all(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (float v : *x.data) acc += v;
  Tensor y = Tensor::full({1, 1, 1, 1}, float(acc));
  if (tape) {
    const int xn = x.node;
    const int64_t n = x.numel();
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      if (xn < 0) return;
      const float g = t.grad(self)[0];
      float* gx = t.grad(xn).data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

inline Tensor mean_all(Tape* tape, const Tensor& x) {
  return scale(tape, sum_all(tape, x), 1.f / float(x.numel()));
}

inline Tensor slice_channels(Tape* tape, const Tensor& x, int c0, int c1) {
  const int B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw shape_error("slice_channels: bad range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") for " + x.shape.str());
  const int Cs = c1 - c0;
  Tensor y = Tensor::zeros({B, Cs, H, W});
  const int64_t plane = int64_t(H) * W;
  for (int b = 0; b < B; ++b)
    std::memcpy(y.ptr() + int64_t(b) * Cs * plane,
                x.ptr() + (int64_t(b) * C + c0) * plane,
                size_t(Cs * plane) * sizeof(float));
  if (tape) {
    const int xn = x.node;
    const int self = detail::tape_next_id(*tape);
    y.node = tape->record(y.shape, [=](Tape& t) {
      if (xn < 0) return;
      const float* g = t.grad(self).data();
      float* gx = t.grad(xn).data();
      for (int b = 0; b < B; ++b) {
        float* dst = gx + (int64_t(b) * C + c0) * plane;
        const float* src = g + int64_t(b) * Cs * plane;
        for (int64_t i = 0; i < Cs * plane; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

// Per-sample selection: output sample i is a[i] where take_a[i], else b[i].
// Used to mix ground truth and model feedback under a sampling mask.
inline Tensor blend_batch(Tape* tape, const std::vector<uint8_t>& take_a,
                          const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "blend_batch");
  if (int(take_a.size()) != a.shape.b)
    throw shape_error("blend_batch: mask size must equal batch");
  Tensor y = Tensor::zeros(a.shape);
  const int64_t per = a.numel() / a.shape.b;
  for (int i = 0; i < a.shape.b; ++i) {
    const float* src = (take_a[i] ? a.ptr() : b.ptr()) + i * per;
    std::memcpy(y.ptr() + i * per, src, size_t(per) * sizeof(float));
  }
  if (tape) {
    const int an = a.node, bn = b.node;
    const int self = detail::tape_next_id(*tape);
    auto mask = take_a;
    y.node = tape->record(y.shape, [=](Tape& t) {
      const float* g = t.grad(self).data();
      for (int i = 0; i < int(mask.size()); ++i) {
        const int node = mask[i] ? an : bn;
        if (node < 0) continue;
        float* gd = t.grad(node).data() + i * per;
        const float* gs = g + i * per;
        for (int64_t j = 0; j < per; ++j) gd[j] += gs[j];
      }
    });
  }
  return y;
}

}  // namespace stp
