#include "gradattn/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "gradattn/ops.hpp"

namespace gradattn {

std::string pe_name(PeVariant v) {
  switch (v) {
    case PeVariant::NoPE:
      return "nope";
    case PeVariant::LearnablePE:
      return "learnable";
    case PeVariant::RoPE:
      return "rope";
  }
  return "nope";
}

PeVariant pe_from_name(const std::string& name) {
  if (name == "nope") return PeVariant::NoPE;
  if (name == "learnable") return PeVariant::LearnablePE;
  if (name == "rope") return PeVariant::RoPE;
  throw std::invalid_argument("unknown positional encoding '" + name +
                              "' (expected nope|learnable|rope)");
}

void EncoderConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("encoder: depth must be >= 1");
  if (heads < 1 || embed_dim < 1 || ffn_dim < 1) {
    throw std::invalid_argument("encoder: heads/embed_dim/ffn_dim must be positive");
  }
  if (embed_dim % heads != 0) {
    throw std::invalid_argument("encoder: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (pe == PeVariant::RoPE && (embed_dim / heads) % 2 != 0) {
    throw std::invalid_argument("encoder: RoPE needs an even head dim, got " +
                                std::to_string(embed_dim / heads));
  }
}

Tensor apply_rope(const Tensor& x, double base) {
  if (x.rank() != 4) {
    throw std::invalid_argument("rope: input must be [B,h,T,dh], got " + shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), h = x.dim(1), T = x.dim(2), dh = x.dim(3);
  if (dh % 2 != 0) {
    throw std::invalid_argument("rope: head dim must be even, got " + std::to_string(dh));
  }
  const int64_t half = dh / 2;
  // cos/sin table [T, half], shared by forward and backward.
  auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(T * half * 2));
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t j = 0; j < half; ++j) {
      const double theta =
          static_cast<double>(t) *
          std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
      (*cs)[static_cast<size_t>((t * half + j) * 2)] = std::cos(theta);
      (*cs)[static_cast<size_t>((t * half + j) * 2 + 1)] = std::sin(theta);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  const int64_t rows = B * h;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t t = 0; t < T; ++t) {
      const double* src = xd.data() + (r * T + t) * dh;
      double* dst = od.data() + (r * T + t) * dh;
      for (int64_t j = 0; j < half; ++j) {
        const double c = (*cs)[static_cast<size_t>((t * half + j) * 2)];
        const double s = (*cs)[static_cast<size_t>((t * half + j) * 2 + 1)];
        const double a = src[2 * j], b = src[2 * j + 1];
        dst[2 * j] = a * c - b * s;
        dst[2 * j + 1] = a * s + b * c;
      }
    }
  }
  auto xi = x.impl();
  return finish_op("rope", {x}, std::move(out),
                   [xi, cs, rows, T, half, dh](BackwardCtx& ctx, const std::vector<double>& dy) {
                     // Gradient of a rotation is the inverse rotation.
                     auto& dx = ctx.buf(xi);
                     for (int64_t r = 0; r < rows; ++r) {
                       for (int64_t t = 0; t < T; ++t) {
                         const double* g = dy.data() + (r * T + t) * dh;
                         double* dst = dx.data() + (r * T + t) * dh;
                         for (int64_t j = 0; j < half; ++j) {
                           const double c = (*cs)[static_cast<size_t>((t * half + j) * 2)];
                           const double s = (*cs)[static_cast<size_t>((t * half + j) * 2 + 1)];
                           const double ga = g[2 * j], gb = g[2 * j + 1];
                           dst[2 * j] += ga * c + gb * s;
                           dst[2 * j + 1] += -ga * s + gb * c;
                         }
                       }
                     }
                   });
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw std::invalid_argument("attention: q/k/v must share shape [B,h,T,dh], got " +
                                shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                                shape_str(v.shape()));
  }
  const int64_t dh = q.dim(3);
  Tensor kt = permute(k, {0, 1, 3, 2});                       // [B,h,dh,T]
  Tensor scores = scale(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor att = softmax(scores, -1);                           // rows sum to 1
  return matmul(att, v);                                      // [B,h,T,dh]
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, int embed_dim,
                                       int heads, PeVariant pe, Rng& rng)
    : d_(embed_dim), h_(heads), dh_(embed_dim / std::max(heads, 1)), pe_(pe) {
  if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0) {
    throw std::invalid_argument("mha: embed_dim " + std::to_string(embed_dim) +
                                " must be positive and divisible by heads " +
                                std::to_string(heads));
  }
  if (pe == PeVariant::RoPE && dh_ % 2 != 0) {
    throw std::invalid_argument("mha: RoPE needs an even head dim, got " + std::to_string(dh_));
  }
  const auto init = LinearLayer::Init::XavierUniform;
  q_ = std::make_unique<LinearLayer>(ps, name + ".q_proj", d_, d_, init, rng);
  k_ = std::make_unique<LinearLayer>(ps, name + ".k_proj", d_, d_, init, rng);
  v_ = std::make_unique<LinearLayer>(ps, name + ".v_proj", d_, d_, init, rng);
  o_ = std::make_unique<LinearLayer>(ps, name + ".o_proj", d_, d_, init, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& z) const {
  if (z.rank() != 3 || z.dim(2) != d_) {
    throw std::invalid_argument("mha: input must be [B,T," + std::to_string(d_) + "], got " +
                                shape_str(z.shape()));
  }
  const int64_t B = z.dim(0), T = z.dim(1);
  Tensor zf = reshape(z, {B * T, d_});
  auto split = [&](const LinearLayer& proj) {
    // [B*T,d] -> [B,h,T,dh]
    return permute(reshape(proj.forward(zf), {B, T, h_, dh_}), {0, 2, 1, 3});
  };
  Tensor q = split(*q_);
  Tensor k = split(*k_);
  Tensor v = split(*v_);
  if (pe_ == PeVariant::RoPE) {
    q = apply_rope(q);
    k = apply_rope(k);
  }
  Tensor ctx = scaled_dot_attention(q, k, v);                  // [B,h,T,dh]
  Tensor merged = reshape(permute(ctx, {0, 2, 1, 3}), {B * T, d_});
  return reshape(o_->forward(merged), {B, T, d_});
}

EncoderBlock::EncoderBlock(ParamStore& ps, const std::string& name, const EncoderConfig& cfg,
                           Rng& rng) {
  ln1_ = std::make_unique<LayerNormLayer>(ps, name + ".ln1", cfg.embed_dim);
  attn_ = std::make_unique<MultiHeadAttention>(ps, name + ".attn", cfg.embed_dim, cfg.heads,
                                               cfg.pe, rng);
  ln2_ = std::make_unique<LayerNormLayer>(ps, name + ".ln2", cfg.embed_dim);
  ffn1_ = std::make_unique<LinearLayer>(ps, name + ".ffn1", cfg.embed_dim, cfg.ffn_dim,
                                        LinearLayer::Init::HeNormal, rng);
  ffn2_ = std::make_unique<LinearLayer>(ps, name + ".ffn2", cfg.ffn_dim, cfg.embed_dim,
                                        LinearLayer::Init::HeNormal, rng);
}

Tensor EncoderBlock::forward(const Tensor& z) const {
  Tensor h = add(z, attn_->forward(ln1_->forward(z)));
  const int64_t B = h.dim(0), T = h.dim(1), d = h.dim(2);
  Tensor n = ln2_->forward(h);
  Tensor f = reshape(n, {B * T, d});
  f = ffn2_->forward(relu(ffn1_->forward(f)));
  return add(h, reshape(f, {B, T, d}));
}

TransformerEncoder::TransformerEncoder(ParamStore& ps, const std::string& name,
                                       const EncoderConfig& cfg, int seq_len, Rng& rng)
    : cfg_(cfg), seq_len_(seq_len) {
  cfg_.validate();
  if (seq_len < 1) throw std::invalid_argument("encoder: seq_len must be >= 1");
  if (cfg_.pe == PeVariant::LearnablePE) {
    pe_table_ = ps.add(name + ".pe.table",
                       Tensor::randn({seq_len, cfg_.embed_dim}, rng, 0.02));
  }
  for (int l = 0; l < cfg_.depth; ++l) {
    blocks_.push_back(
        std::make_unique<EncoderBlock>(ps, name + ".l" + std::to_string(l), cfg_, rng));
  }
}

Tensor TransformerEncoder::forward(const Tensor& z) const {
  if (z.rank() != 3 || z.dim(2) != cfg_.embed_dim) {
    throw std::invalid_argument("encoder: input must be [B,T," +
                                std::to_string(cfg_.embed_dim) + "], got " +
                                shape_str(z.shape()));
  }
  Tensor h = z;
  if (cfg_.pe == PeVariant::LearnablePE) {
    if (z.dim(1) != seq_len_) {
      throw std::invalid_argument("encoder: learnable PE table covers seq_len " +
                                  std::to_string(seq_len_) + " but input has T=" +
                                  std::to_string(z.dim(1)));
    }
    h = add_broadcast(h, pe_table_);
  }
  for (const auto& b : blocks_) h = b->forward(h);
  return h;
}

}  // namespace gradattn
