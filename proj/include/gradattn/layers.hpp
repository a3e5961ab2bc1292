#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gradattn/params.hpp"
#include "gradattn/tensor.hpp"

namespace gradattn {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Functional layer ops (all differentiable, all recorded on the tape)
// ---------------------------------------------------------------------------

struct Conv2dParams {
  Tensor weight;               // [out_ch, in_ch, kh, kw]
  std::optional<Tensor> bias;  // [out_ch]
  int stride = 1;
  int padding = 0;
};

// x: [B, in_ch, H, W] -> [B, out_ch, H', W'] with
// H' = (H + 2*padding - kh) / stride + 1 (floor). im2col + GEMM inside;
// columns are recomputed during backward instead of cached.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

struct MaxPoolResult {
  Tensor output;                // [B, C, H', W']
  std::vector<int64_t> argmax;  // flat index into x per output element (first max wins)
};

// No padding; throws if kernel exceeds the input extent.
MaxPoolResult maxpool2d_with_indices(const Tensor& x, int kernel, int stride);
Tensor maxpool2d(const Tensor& x, int kernel, int stride);

// [B, C, H, W] -> [B, C] (mean over the spatial plane).
Tensor global_avg_pool(const Tensor& x);

// x: [B, in], w: [out, in], b: [out] -> [B, out]; y = x w^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct NormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Train mode normalizes with biased batch statistics over (B,H,W) per channel
// and updates running stats (unbiased variance); eval mode uses the running
// stats. Train mode requires batch size >= 2.
Tensor batchnorm2d(const Tensor& x, NormParams& p, Mode mode);

// Normalizes over the last axis; gamma/beta have that axis's length.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Mean negative log-likelihood over the batch from raw logits [B, K] via a
// stable log-sum-exp. Targets must lie in [0, K).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// ---------------------------------------------------------------------------
// Layer objects (own their parameters through a ParamStore)
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  Conv2dLayer(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int kernel,
              int stride, int padding, bool bias, Rng& rng);  // He-normal weights
  Tensor forward(const Tensor& x) const { return conv2d(x, p); }
  Conv2dParams p;
};

struct BatchNorm2dLayer {
  BatchNorm2dLayer(ParamStore& ps, const std::string& name, int channels);
  Tensor forward(const Tensor& x, Mode mode) { return batchnorm2d(x, p, mode); }
  NormParams p;
};

struct LinearLayer {
  enum class Init { HeNormal, XavierUniform };
  LinearLayer(ParamStore& ps, const std::string& name, int in, int out, Init init, Rng& rng);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  Tensor w, b;
};

struct LayerNormLayer {
  LayerNormLayer(ParamStore& ps, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const { return layernorm(x, gamma, beta); }
  Tensor gamma, beta;
};

}  // namespace gradattn
