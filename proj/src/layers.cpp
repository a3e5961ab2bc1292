#include "gradattn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gradattn/errors.hpp"
#include "kernels.hpp"

namespace gradattn {

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------
namespace {

struct ConvDims {
  int64_t B, C, H, W, O, kh, kw, H2, W2;
  int s, p;
  int64_t K() const { return C * kh * kw; }
  int64_t N() const { return B * H2 * W2; }
};

ConvDims conv_dims(const Tensor& x, const Conv2dParams& prm) {
  if (x.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  }
  if (prm.weight.rank() != 4) {
    throw std::invalid_argument("conv2d: weight must be [O,C,kh,kw], got " +
                                shape_str(prm.weight.shape()));
  }
  if (prm.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (prm.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  ConvDims d{};
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.O = prm.weight.dim(0);
  d.kh = prm.weight.dim(2);
  d.kw = prm.weight.dim(3);
  d.s = prm.stride;
  d.p = prm.padding;
  if (prm.weight.dim(1) != d.C) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.C) +
                                " channels but weight expects " +
                                std::to_string(prm.weight.dim(1)));
  }
  if (prm.bias && (prm.bias->rank() != 1 || prm.bias->dim(0) != d.O)) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(prm.bias->shape()) +
                                " does not match " + std::to_string(d.O) + " output channels");
  }
  d.H2 = (d.H + 2 * d.p - d.kh) / d.s + 1;
  d.W2 = (d.W + 2 * d.p - d.kw) / d.s + 1;
  if (d.kh > d.H + 2 * d.p || d.kw > d.W + 2 * d.p || d.H2 < 1 || d.W2 < 1) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(d.kh) + "x" +
                                std::to_string(d.kw) + " does not fit padded input " +
                                shape_str(x.shape()) + " (padding " + std::to_string(d.p) + ")");
  }
  return d;
}

// cols is [K, N] with K = C*kh*kw rows and N = B*H2*W2 columns; column index
// is (b*H2 + oy)*W2 + ox.
// Each (c,ky,kx) row of cols is written by exactly one thread.
void im2col(const double* x, const ConvDims& d, double* cols) {
  const int64_t N = d.N();
#pragma omp parallel for schedule(static) collapse(3)
  for (int64_t c = 0; c < d.C; ++c) {
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        double* row = cols + ((c * d.kh + ky) * d.kw + kx) * N;
        for (int64_t b = 0; b < d.B; ++b) {
          const double* img = x + (b * d.C + c) * d.H * d.W;
          for (int64_t oy = 0; oy < d.H2; ++oy) {
            const int64_t iy = oy * d.s + ky - d.p;
            double* dst = row + (b * d.H2 + oy) * d.W2;
            if (iy < 0 || iy >= d.H) {
              std::fill(dst, dst + d.W2, 0.0);
              continue;
            }
            const double* src = img + iy * d.W;
            for (int64_t ox = 0; ox < d.W2; ++ox) {
              const int64_t ix = ox * d.s + kx - d.p;
              dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Batch-outermost so each thread scatters into its own image; the per-pixel
// accumulation order over (ky,kx,oy,ox) is fixed, keeping sums bit-stable.
void col2im_add(const double* cols, const ConvDims& d, double* dx) {
  const int64_t N = d.N();
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < d.B; ++b) {
    for (int64_t c = 0; c < d.C; ++c) {
      double* img = dx + (b * d.C + c) * d.H * d.W;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const double* row = cols + ((c * d.kh + ky) * d.kw + kx) * N;
          for (int64_t oy = 0; oy < d.H2; ++oy) {
            const int64_t iy = oy * d.s + ky - d.p;
            if (iy < 0 || iy >= d.H) continue;
            const double* src = row + (b * d.H2 + oy) * d.W2;
            double* dst = img + iy * d.W;
            for (int64_t ox = 0; ox < d.W2; ++ox) {
              const int64_t ix = ox * d.s + kx - d.p;
              if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& prm) {
  const ConvDims d = conv_dims(x, prm);
  const int64_t K = d.K(), N = d.N();

  std::vector<double> cols(static_cast<size_t>(K * N));
  im2col(x.data().data(), d, cols.data());

  // Y2[o, n] = W[o, :] . cols[:, n]
  std::vector<double> y2(static_cast<size_t>(d.O * N));
  detail::gemm_nn(prm.weight.data().data(), cols.data(), y2.data(), d.O, K, N, false);

  Tensor out = Tensor::zeros({d.B, d.O, d.H2, d.W2});
  auto& od = out.data();
  const double* bias = prm.bias ? prm.bias->data().data() : nullptr;
  for (int64_t b = 0; b < d.B; ++b) {
    for (int64_t o = 0; o < d.O; ++o) {
      const double bv = bias ? bias[o] : 0.0;
      const double* src = y2.data() + o * N + b * d.H2 * d.W2;
      double* dst = od.data() + (b * d.O + o) * d.H2 * d.W2;
      for (int64_t i = 0; i < d.H2 * d.W2; ++i) dst[i] = src[i] + bv;
    }
  }

  auto xi = x.impl();
  auto wi = prm.weight.impl();
  std::shared_ptr<TensorImpl> bi = prm.bias ? prm.bias->impl() : nullptr;
  std::vector<Tensor> inputs{x, prm.weight};
  if (prm.bias) inputs.push_back(*prm.bias);

  auto backward = [xi, wi, bi, d](BackwardCtx& ctx, const std::vector<double>& dy) {
    const int64_t K = d.K(), N = d.N();
    // Rearrange dy [B,O,H2,W2] into dY2 [O, N].
    std::vector<double> dy2(static_cast<size_t>(d.O * N));
    for (int64_t b = 0; b < d.B; ++b) {
      for (int64_t o = 0; o < d.O; ++o) {
        const double* src = dy.data() + (b * d.O + o) * d.H2 * d.W2;
        double* dst = dy2.data() + o * N + b * d.H2 * d.W2;
        std::copy_n(src, d.H2 * d.W2, dst);
      }
    }
    if (bi) {
      auto& db = ctx.buf(bi);
      for (int64_t o = 0; o < d.O; ++o) {
        double s = 0.0;
        const double* row = dy2.data() + o * N;
        for (int64_t n = 0; n < N; ++n) s += row[n];
        db[static_cast<size_t>(o)] += s;
      }
    }
    // Columns are cheap to rebuild relative to holding them across the pass.
    std::vector<double> cols(static_cast<size_t>(K * N));
    im2col(xi->data.data(), d, cols.data());

    std::vector<double> dw(static_cast<size_t>(d.O * K));
    detail::gemm_nt(dy2.data(), cols.data(), dw.data(), d.O, N, K, false);
    auto& dwbuf = ctx.buf(wi);
    const double sign = testing::corrupt_conv2d_backward ? -1.0 : 1.0;
    for (size_t i = 0; i < dw.size(); ++i) dwbuf[i] += sign * dw[i];

    std::vector<double> dcols(static_cast<size_t>(K * N));
    detail::gemm_tn(wi->data.data(), dy2.data(), dcols.data(), d.O, K, N, false);
    col2im_add(dcols.data(), d, ctx.buf(xi).data());
  };
  return finish_op("conv2d", inputs, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------
MaxPoolResult maxpool2d_with_indices(const Tensor& x, int kernel, int stride) {
  if (x.rank() != 4) {
    throw std::invalid_argument("maxpool2d: input must be [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  if (kernel < 1 || stride < 1) {
    throw std::invalid_argument("maxpool2d: kernel and stride must be >= 1");
  }
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel > H || kernel > W) {
    throw std::invalid_argument("maxpool2d: kernel " + std::to_string(kernel) +
                                " larger than input " + shape_str(x.shape()));
  }
  const int64_t H2 = (H - kernel) / stride + 1;
  const int64_t W2 = (W - kernel) / stride + 1;

  Tensor out = Tensor::zeros({B, C, H2, W2});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const auto& xd = x.data();
  auto& od = out.data();
  int64_t w_out = 0;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t base = (b * C + c) * H * W;
      for (int64_t oy = 0; oy < H2; ++oy) {
        for (int64_t ox = 0; ox < W2; ++ox, ++w_out) {
          int64_t best_idx = base + (oy * stride) * W + ox * stride;
          double best = xd[static_cast<size_t>(best_idx)];
          for (int64_t ky = 0; ky < kernel; ++ky) {
            const int64_t iy = oy * stride + ky;
            for (int64_t kx = 0; kx < kernel; ++kx) {
              const int64_t idx = base + iy * W + ox * stride + kx;
              const double v = xd[static_cast<size_t>(idx)];
              if (v > best) {  // strict: first maximal index wins ties
                best = v;
                best_idx = idx;
              }
            }
          }
          od[static_cast<size_t>(w_out)] = best;
          (*argmax)[static_cast<size_t>(w_out)] = best_idx;
        }
      }
    }
  }
  auto xi = x.impl();
  Tensor recorded = finish_op("maxpool2d", {x}, std::move(out),
                              [xi, argmax](BackwardCtx& ctx, const std::vector<double>& dy) {
                                auto& dx = ctx.buf(xi);
                                for (size_t i = 0; i < dy.size(); ++i) {
                                  dx[static_cast<size_t>((*argmax)[i])] += dy[i];
                                }
                              });
  return MaxPoolResult{std::move(recorded), *argmax};
}

Tensor maxpool2d(const Tensor& x, int kernel, int stride) {
  return maxpool2d_with_indices(x, kernel, stride).output;
}

// ---------------------------------------------------------------------------
// global_avg_pool
// ---------------------------------------------------------------------------
Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) {
    throw std::invalid_argument("global_avg_pool: input must be [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({B, C});
  const auto& xd = x.data();
  auto& od = out.data();
  const double inv = 1.0 / static_cast<double>(plane);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    const double* src = xd.data() + bc * plane;
    for (int64_t i = 0; i < plane; ++i) s += src[i];
    od[static_cast<size_t>(bc)] = s * inv;
  }
  auto xi = x.impl();
  return finish_op("global_avg_pool", {x}, std::move(out),
                   [xi, B, C, plane, inv](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& dx = ctx.buf(xi);
                     for (int64_t bc = 0; bc < B * C; ++bc) {
                       const double g = dy[static_cast<size_t>(bc)] * inv;
                       double* dst = dx.data() + bc * plane;
                       for (int64_t i = 0; i < plane; ++i) dst[i] += g;
                     }
                   });
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
    throw std::invalid_argument("linear: expected x [B,in], w [out,in], b [out]; got " +
                                shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
                                shape_str(b.shape()));
  }
  const int64_t B = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out_dim) {
    throw std::invalid_argument("linear: dim mismatch between x " + shape_str(x.shape()) +
                                ", w " + shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({B, out_dim});
  detail::gemm_nt(x.data().data(), w.data().data(), out.data().data(), B, in, out_dim, false);
  auto& od = out.data();
  const auto& bd = b.data();
  for (int64_t r = 0; r < B; ++r) {
    for (int64_t o = 0; o < out_dim; ++o) od[static_cast<size_t>(r * out_dim + o)] += bd[static_cast<size_t>(o)];
  }
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.impl();
  return finish_op("linear", {x, w, b}, std::move(out),
                   [xi, wi, bi, B, in, out_dim](BackwardCtx& ctx, const std::vector<double>& dy) {
                     // dX = dY * W ; dW = dY^T * X ; db = column sums of dY
                     detail::gemm_nn(dy.data(), wi->data.data(), ctx.buf(xi).data(), B, out_dim,
                                     in, true);
                     detail::gemm_tn(dy.data(), xi->data.data(), ctx.buf(wi).data(), B, out_dim,
                                     in, true);
                     auto& db = ctx.buf(bi);
                     for (int64_t r = 0; r < B; ++r) {
                       const double* g = dy.data() + r * out_dim;
                       for (int64_t o = 0; o < out_dim; ++o) db[static_cast<size_t>(o)] += g[o];
                     }
                   });
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------
Tensor batchnorm2d(const Tensor& x, NormParams& p, Mode mode) {
  if (x.rank() != 4) {
    throw std::invalid_argument("batchnorm2d: input must be [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Shape ch{C};
  if (p.gamma.shape() != ch || p.beta.shape() != ch || p.running_mean.shape() != ch ||
      p.running_var.shape() != ch) {
    throw std::invalid_argument("batchnorm2d: parameter shapes must be [" + std::to_string(C) +
                                "] to match input " + shape_str(x.shape()));
  }
  if (mode == Mode::Train && B < 2) {
    throw std::invalid_argument("batchnorm2d: train mode needs batch size >= 2, got " +
                                std::to_string(B));
  }
  const int64_t plane = H * W;
  const int64_t n = B * plane;
  const NumericMode nm = numeric_mode();

  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  const auto& xd = x.data();

  if (mode == Mode::Train) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* src = xd.data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += src[i];
      }
      const double mean = s / static_cast<double>(n);
      double sq = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* src = xd.data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double dv = src[i] - mean;
          sq += dv * dv;
        }
      }
      const double var = sq / static_cast<double>(n);  // biased, used for normalization
      (*inv_std)[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + p.eps);

      auto& rm = p.running_mean.data()[static_cast<size_t>(c)];
      auto& rv = p.running_var.data()[static_cast<size_t>(c)];
      rm = snap((1.0 - p.momentum) * rm + p.momentum * mean, nm);
      const double var_unbiased = sq / static_cast<double>(n - 1);
      rv = snap((1.0 - p.momentum) * rv + p.momentum * var_unbiased, nm);

      const double is = (*inv_std)[static_cast<size_t>(c)];
      for (int64_t b = 0; b < B; ++b) {
        const double* src = xd.data() + (b * C + c) * plane;
        double* dst = xhat->data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * is;
      }
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      const double mean = p.running_mean.data()[static_cast<size_t>(c)];
      const double is = 1.0 / std::sqrt(p.running_var.data()[static_cast<size_t>(c)] + p.eps);
      (*inv_std)[static_cast<size_t>(c)] = is;
      for (int64_t b = 0; b < B; ++b) {
        const double* src = xd.data() + (b * C + c) * plane;
        double* dst = xhat->data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * is;
      }
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  auto& od = out.data();
  const auto& gd = p.gamma.data();
  const auto& bd = p.beta.data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double g = gd[static_cast<size_t>(c)], be = bd[static_cast<size_t>(c)];
      const double* src = xhat->data() + (b * C + c) * plane;
      double* dst = od.data() + (b * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = g * src[i] + be;
    }
  }

  auto xi = x.impl();
  auto gi = p.gamma.impl();
  auto bi = p.beta.impl();
  const bool train = mode == Mode::Train;
  auto backward = [xi, gi, bi, xhat, inv_std, B, C, plane, n,
                   train](BackwardCtx& ctx, const std::vector<double>& dy) {
    auto& dxb = ctx.buf(xi);
    auto& dgb = ctx.buf(gi);
    auto& dbb = ctx.buf(bi);
    for (int64_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* g = dy.data() + (b * C + c) * plane;
        const double* xh = xhat->data() + (b * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += g[i] * xh[i];
        }
      }
      dgb[static_cast<size_t>(c)] += sum_dy_xhat;
      dbb[static_cast<size_t>(c)] += sum_dy;

      const double gamma = gi->data[static_cast<size_t>(c)];
      const double is = (*inv_std)[static_cast<size_t>(c)];
      if (train) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (int64_t b = 0; b < B; ++b) {
          const double* g = dy.data() + (b * C + c) * plane;
          const double* xh = xhat->data() + (b * C + c) * plane;
          double* dx = dxb.data() + (b * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            dx[i] += gamma * is * (g[i] - inv_n * (sum_dy + xh[i] * sum_dy_xhat));
          }
        }
      } else {
        for (int64_t b = 0; b < B; ++b) {
          const double* g = dy.data() + (b * C + c) * plane;
          double* dx = dxb.data() + (b * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) dx[i] += gamma * is * g[i];
        }
      }
    }
  };
  return finish_op("batchnorm2d", {x, p.gamma, p.beta}, std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layernorm: input must have rank >= 1");
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw std::invalid_argument("layernorm: gamma/beta must be [" + std::to_string(d) +
                                "] for input " + shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * d;
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) s += src[i];
    const double mean = s / static_cast<double>(d);
    double sq = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double dv = src[i] - mean;
      sq += dv * dv;
    }
    const double is = 1.0 / std::sqrt(sq / static_cast<double>(d) + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    double* xh = xhat->data() + r * d;
    double* dst = od.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      xh[i] = (src[i] - mean) * is;
      dst[i] = gd[static_cast<size_t>(i)] * xh[i] + bd[static_cast<size_t>(i)];
    }
  }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return finish_op(
      "layernorm", {x, gamma, beta}, std::move(out),
      [xi, gi, bi, xhat, inv_std, rows, d](BackwardCtx& ctx, const std::vector<double>& dy) {
        auto& dxb = ctx.buf(xi);
        auto& dgb = ctx.buf(gi);
        auto& dbb = ctx.buf(bi);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t r = 0; r < rows; ++r) {
          const double* g = dy.data() + r * d;
          const double* xh = xhat->data() + r * d;
          double m_dxhat = 0.0, m_dxhat_xhat = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            const double dxh = g[i] * gi->data[static_cast<size_t>(i)];
            m_dxhat += dxh;
            m_dxhat_xhat += dxh * xh[i];
            dgb[static_cast<size_t>(i)] += g[i] * xh[i];
            dbb[static_cast<size_t>(i)] += g[i];
          }
          m_dxhat *= inv_d;
          m_dxhat_xhat *= inv_d;
          const double is = (*inv_std)[static_cast<size_t>(r)];
          double* dx = dxb.data() + r * d;
          for (int64_t i = 0; i < d; ++i) {
            const double dxh = g[i] * gi->data[static_cast<size_t>(i)];
            dx[i] += is * (dxh - m_dxhat - xh[i] * m_dxhat_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// cross_entropy
// ---------------------------------------------------------------------------
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [B,K], got " +
                                shape_str(logits.shape()));
  }
  const int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != B) {
    throw std::invalid_argument("cross_entropy: got " + std::to_string(targets.size()) +
                                " targets for batch of " + std::to_string(B));
  }
  for (int t : targets) {
    if (t < 0 || t >= K) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                  " outside [0," + std::to_string(K) + ")");
    }
  }
  if (!logits.all_finite()) {
    throw NumericError("cross_entropy: logits contain non-finite values");
  }

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(logits.numel()));
  const auto& ld = logits.data();
  double total = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double* row = ld.data() + b * K;
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    double* pr = probs->data() + b * K;
    for (int64_t k = 0; k < K; ++k) pr[k] = std::exp(row[k] - lse);
    total += lse - row[targets[static_cast<size_t>(b)]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));

  auto li = logits.impl();
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return finish_op("cross_entropy", {logits}, std::move(out),
                   [li, probs, tgt, B, K](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& dl = ctx.buf(li);
                     const double g = dy[0] / static_cast<double>(B);
                     for (int64_t b = 0; b < B; ++b) {
                       const double* pr = probs->data() + b * K;
                       double* dst = dl.data() + b * K;
                       const int t = (*tgt)[static_cast<size_t>(b)];
                       for (int64_t k = 0; k < K; ++k) {
                         dst[k] += g * (pr[k] - (k == t ? 1.0 : 0.0));
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------
Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                         int kernel, int stride, int padding, bool bias, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
  p.weight = ps.add(name + ".weight",
                    Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, std_dev));
  if (bias) p.bias = ps.add(name + ".bias", Tensor::zeros({out_ch}));
  p.stride = stride;
  p.padding = padding;
}

BatchNorm2dLayer::BatchNorm2dLayer(ParamStore& ps, const std::string& name, int channels) {
  p.gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1.0));
  p.beta = ps.add(name + ".beta", Tensor::zeros({channels}));
  p.running_mean = ps.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  p.running_var = ps.add_buffer(name + ".running_var", Tensor::full({channels}, 1.0));
}

LinearLayer::LinearLayer(ParamStore& ps, const std::string& name, int in, int out, Init init,
                         Rng& rng) {
  if (init == Init::HeNormal) {
    w = ps.add(name + ".weight", Tensor::randn({out, in}, rng, std::sqrt(2.0 / in)));
  } else {
    const double limit = std::sqrt(6.0 / (static_cast<double>(in) + out));
    w = ps.add(name + ".weight", Tensor::rand_uniform({out, in}, rng, -limit, limit));
  }
  b = ps.add(name + ".bias", Tensor::zeros({out}));
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& name, int dim) {
  gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
  beta = ps.add(name + ".beta", Tensor::zeros({dim}));
}

}  // namespace gradattn
