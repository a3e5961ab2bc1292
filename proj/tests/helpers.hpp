#pragma once

// Independent reference implementations used as test oracles. These share no
// code with the engine under test: plain nested loops, no tape, no gemm.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gradattn/layers.hpp"
#include "gradattn/params.hpp"
#include "gradattn/tensor.hpp"

namespace testhelpers {

using gradattn::Conv2dParams;
using gradattn::ParamStore;
using gradattn::Shape;
using gradattn::Tensor;

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::logic_error("max_abs_diff: shape mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

// Direct 7-loop convolution, the textbook definition.
inline Tensor conv2d_naive(const Tensor& x, const Conv2dParams& p) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = p.weight.dim(0), kh = p.weight.dim(2), kw = p.weight.dim(3);
  const int64_t s = p.stride, pad = p.padding;
  const int64_t H2 = (H + 2 * pad - kh) / s + 1;
  const int64_t W2 = (W + 2 * pad - kw) / s + 1;
  Tensor out = Tensor::zeros({B, O, H2, W2});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oy = 0; oy < H2; ++oy)
        for (int64_t ox = 0; ox < W2; ++ox) {
          double acc = p.bias ? p.bias->at({o}) : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * s + ky - pad;
                const int64_t ix = ox * s + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at({b, c, iy, ix}) * p.weight.at({o, c, ky, kx});
              }
          out.data()[size_t(((b * O + o) * H2 + oy) * W2 + ox)] = acc;
        }
  return out;
}

// Unfused multi-head attention reference operating on the same parameters a
// MultiHeadAttention named `name` registered in `ps` (q/k/v/o projections).
// Everything is per-scalar loops: projections, optional rotary encoding,
// softmax over scores, weighted value sums, output projection.
inline Tensor mha_naive(const ParamStore& ps, const std::string& name, const Tensor& z,
                        int heads, bool rope, double base = 10000.0) {
  const int64_t B = z.dim(0), T = z.dim(1), d = z.dim(2);
  const int64_t dh = d / heads;
  auto W = [&](const char* which) { return ps.at(name + "." + which + ".weight"); };
  auto bqv = [&](const char* which) { return ps.at(name + "." + which + ".bias"); };

  auto project = [&](const Tensor& w, const Tensor& bias) {
    Tensor out = Tensor::zeros({B, T, d});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t o = 0; o < d; ++o) {
          double acc = bias.at({o});
          for (int64_t i = 0; i < d; ++i) acc += z.at({b, t, i}) * w.at({o, i});
          out.data()[size_t((b * T + t) * d + o)] = acc;
        }
    return out;
  };
  Tensor q = project(W("q_proj"), bqv("q_proj"));
  Tensor k = project(W("k_proj"), bqv("k_proj"));
  Tensor v = project(W("v_proj"), bqv("v_proj"));

  if (rope) {
    for (Tensor* t : {&q, &k}) {
      for (int64_t b = 0; b < B; ++b)
        for (int64_t pos = 0; pos < T; ++pos)
          for (int64_t h = 0; h < heads; ++h)
            for (int64_t j = 0; j < dh / 2; ++j) {
              const double theta = double(pos) * std::pow(base, -2.0 * double(j) / double(dh));
              const int64_t i0 = (b * T + pos) * d + h * dh + 2 * j;
              double& a = t->data()[size_t(i0)];
              double& bv = t->data()[size_t(i0 + 1)];
              const double a0 = a, b0 = bv;
              a = a0 * std::cos(theta) - b0 * std::sin(theta);
              bv = a0 * std::sin(theta) + b0 * std::cos(theta);
            }
    }
  }

  // head-sliced attention; q/k/v are [B,T,d] with head h at columns [h*dh, (h+1)*dh)
  Tensor ctx = Tensor::zeros({B, T, d});
  const double inv = 1.0 / std::sqrt(double(dh));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < T; ++t) {
        std::vector<double> scores(size_t(T), 0.0);
        double mx = -1e300;
        for (int64_t u = 0; u < T; ++u) {
          double s = 0.0;
          for (int64_t j = 0; j < dh; ++j)
            s += q.at({b, t, h * dh + j}) * k.at({b, u, h * dh + j});
          scores[size_t(u)] = s * inv;
          mx = std::max(mx, scores[size_t(u)]);
        }
        double zsum = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          zsum += s;
        }
        for (double& s : scores) s /= zsum;
        for (int64_t j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (int64_t u = 0; u < T; ++u) acc += scores[size_t(u)] * v.at({b, u, h * dh + j});
          ctx.data()[size_t((b * T + t) * d + h * dh + j)] = acc;
        }
      }

  Tensor wo = W("o_proj");
  Tensor bo = bqv("o_proj");
  Tensor out = Tensor::zeros({B, T, d});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t o = 0; o < d; ++o) {
        double acc = bo.at({o});
        for (int64_t i = 0; i < d; ++i) acc += ctx.at({b, t, i}) * wo.at({o, i});
        out.data()[size_t((b * T + t) * d + o)] = acc;
      }
  return out;
}

}  // namespace testhelpers
