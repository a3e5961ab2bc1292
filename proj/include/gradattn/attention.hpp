#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gradattn/layers.hpp"
#include "gradattn/params.hpp"
#include "gradattn/tensor.hpp"

namespace gradattn {

enum class PeVariant { NoPE, LearnablePE, RoPE };

std::string pe_name(PeVariant v);
PeVariant pe_from_name(const std::string& name);  // "nope" | "learnable" | "rope"

struct EncoderConfig {
  int depth = 3;
  int heads = 8;
  int embed_dim = 256;
  int ffn_dim = 512;
  PeVariant pe = PeVariant::NoPE;
  void validate() const;  // positive dims, embed_dim % heads == 0, RoPE head dim even
};

// Rotary positional encoding on [B,h,T,dh] queries/keys (dh even): position t
// rotates pair (2j, 2j+1) by theta = t * base^(-2j/dh).
Tensor apply_rope(const Tensor& x, double base = 10000.0);

// softmax(Q K^T / sqrt(dh)) V on [B,h,T,dh] inputs. Attention rows are
// probability distributions by construction.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

class MultiHeadAttention {
 public:
  MultiHeadAttention(ParamStore& ps, const std::string& name, int embed_dim, int heads,
                     PeVariant pe, Rng& rng);
  // z: [B,T,d] -> [B,T,d]
  Tensor forward(const Tensor& z) const;

  int embed_dim() const { return d_; }
  int heads() const { return h_; }
  int head_dim() const { return dh_; }

 private:
  int d_, h_, dh_;
  PeVariant pe_;
  std::unique_ptr<LinearLayer> q_, k_, v_, o_;
};

class EncoderBlock {
 public:
  EncoderBlock(ParamStore& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  // Pre-norm: z += MHA(LN(z)); z += FFN(LN(z)).
  Tensor forward(const Tensor& z) const;

 private:
  std::unique_ptr<LayerNormLayer> ln1_, ln2_;
  std::unique_ptr<MultiHeadAttention> attn_;
  std::unique_ptr<LinearLayer> ffn1_, ffn2_;
};

class TransformerEncoder {
 public:
  // seq_len fixes the LearnablePE table length; other variants accept any T.
  TransformerEncoder(ParamStore& ps, const std::string& name, const EncoderConfig& cfg,
                     int seq_len, Rng& rng);
  Tensor forward(const Tensor& z) const;  // [B,T,d] -> [B,T,d]

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  int seq_len_;
  Tensor pe_table_;  // [seq_len, d], LearnablePE only
  std::vector<std::unique_ptr<EncoderBlock>> blocks_;
};

}  // namespace gradattn
