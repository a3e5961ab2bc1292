#include "gradattn/models.hpp"

#include <cmath>
#include <stdexcept>

#include "gradattn/ops.hpp"

namespace gradattn {

// ---------------------------------------------------------------------------
// WidthConfig
// ---------------------------------------------------------------------------
std::array<int, 5> WidthConfig::stage_widths_impl() const {
  const std::array<int, 5> base{64, 64, 128, 256, 512};
  std::array<int, 5> w{};
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = std::max(1, static_cast<int>(std::lround(base[i] * width_scale)));
  }
  return w;
}

std::array<int, 4> WidthConfig::stage_widths() const {
  const auto w = stage_widths_impl();
  return {w[1], w[2], w[3], w[4]};
}

std::array<int, 5> WidthConfig::tap_widths() const { return stage_widths_impl(); }

bool WidthConfig::full_stem() const {
  if (stem == Stem::Full) return true;
  if (stem == Stem::Compact) return false;
  return input_size >= 64;
}

void WidthConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("width config: input_channels must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("width config: num_classes must be >= 2");
  if (!(width_scale > 0.0)) throw std::invalid_argument("width config: width_scale must be > 0");
  const int min_size = full_stem() ? 32 : 8;
  if (input_size < min_size) {
    throw std::invalid_argument("width config: input_size " + std::to_string(input_size) +
                                " below minimum " + std::to_string(min_size) + " for this stem");
  }
}

WidthConfig WidthConfig::full(int num_classes) {
  WidthConfig c;
  c.input_channels = 3;
  c.input_size = 64;
  c.num_classes = num_classes;
  c.width_scale = 1.0;
  c.stem = Stem::Full;
  return c;
}

WidthConfig WidthConfig::desk(int num_classes) {
  WidthConfig c;
  c.input_channels = 1;
  c.input_size = 28;
  c.num_classes = num_classes;
  c.width_scale = 0.25;
  c.stem = Stem::Compact;
  return c;
}

int ModelGraph::skip_add_count() const {
  int n = 0;
  for (const auto& l : layers) n += l.has_skip_add ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Backbone blocks
// ---------------------------------------------------------------------------
namespace {

// One ResNet basic-block position. With `with_skip` it is the standard
// residual block (identity or 1x1-projection shortcut); without it the same
// two conv/BN pairs run as a plain chain and the shortcut machinery does not
// exist at all, so the skipless backbone carries no shortcut parameters.
struct Block {
  Block(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int stride,
        bool with_skip, Rng& rng)
      : skip(with_skip),
        conv1(ps, name + ".conv1", in_ch, out_ch, 3, stride, 1, false, rng),
        bn1(ps, name + ".bn1", out_ch),
        conv2(ps, name + ".conv2", out_ch, out_ch, 3, 1, 1, false, rng),
        bn2(ps, name + ".bn2", out_ch) {
    if (with_skip && (stride != 1 || in_ch != out_ch)) {
      down_conv.emplace(ps, name + ".down.conv", in_ch, out_ch, 1, stride, 0, false, rng);
      down_bn.emplace(ps, name + ".down.bn", out_ch);
    }
  }

  Tensor forward(const Tensor& x, Mode m) {
    Tensor h = relu(bn1.forward(conv1.forward(x), m));
    h = bn2.forward(conv2.forward(h), m);
    if (skip) {
      Tensor s = down_conv ? down_bn->forward(down_conv->forward(x), m) : x;
      return relu(skip_add(h, s));
    }
    return relu(h);
  }

  bool skip;
  Conv2dLayer conv1;
  BatchNorm2dLayer bn1;
  Conv2dLayer conv2;
  BatchNorm2dLayer bn2;
  std::optional<Conv2dLayer> down_conv;
  std::optional<BatchNorm2dLayer> down_bn;
};

// Stem + 4 stages x 2 blocks. forward() returns the five tap activations:
// post-stem-pool and after each stage.
struct Backbone {
  Backbone(ParamStore& ps, const WidthConfig& cfg, bool with_skips, Rng& rng)
      : full_stem(cfg.full_stem()),
        stem_conv(ps, "backbone.stem.conv", cfg.input_channels, cfg.stem_width(),
                  full_stem ? 7 : 3, full_stem ? 2 : 1, full_stem ? 3 : 1, false, rng),
        stem_bn(ps, "backbone.stem.bn", cfg.stem_width()) {
    const auto widths = cfg.stage_widths();
    int in_ch = cfg.stem_width();
    for (int s = 0; s < 4; ++s) {
      const int out_ch = widths[static_cast<size_t>(s)];
      const int stride = s == 0 ? 1 : 2;
      const std::string stage = "backbone.s" + std::to_string(s + 1);
      blocks.emplace_back(ps, stage + ".b0", in_ch, out_ch, stride, with_skips, rng);
      blocks.emplace_back(ps, stage + ".b1", out_ch, out_ch, 1, with_skips, rng);
      in_ch = out_ch;
    }
  }

  std::vector<Tensor> forward(const Tensor& x, Mode m) {
    std::vector<Tensor> taps;
    Tensor h = relu(stem_bn.forward(stem_conv.forward(x), m));
    h = full_stem ? maxpool2d(h, 3, 2) : maxpool2d(h, 2, 2);
    taps.push_back(h);
    for (size_t s = 0; s < 4; ++s) {
      h = blocks[2 * s].forward(h, m);
      h = blocks[2 * s + 1].forward(h, m);
      taps.push_back(h);
    }
    return taps;
  }

  bool full_stem;
  Conv2dLayer stem_conv;
  BatchNorm2dLayer stem_bn;
  std::vector<Block> blocks;
};

void describe_backbone(ModelGraph& g, bool with_skips, bool taps) {
  g.layers.push_back({"stem", "backbone.stem", false});
  g.layers.push_back({"pool", "backbone.stem.pool", false});
  if (taps) g.tap_points.push_back(static_cast<int>(g.layers.size()) - 1);
  for (int s = 1; s <= 4; ++s) {
    for (int b = 0; b < 2; ++b) {
      g.layers.push_back({with_skips ? "basic_block" : "plain_block",
                          "backbone.s" + std::to_string(s) + ".b" + std::to_string(b),
                          with_skips});
    }
    if (taps) g.tap_points.push_back(static_cast<int>(g.layers.size()) - 1);
  }
}

class ResNet18Lite final : public ClassifierModel {
 public:
  ResNet18Lite(const WidthConfig& cfg, uint64_t seed) : rng_(seed) {
    cfg.validate();
    cfg_ = cfg;
    backbone_ = std::make_unique<Backbone>(params_, cfg, /*with_skips=*/true, rng_);
    head_ = std::make_unique<LinearLayer>(params_, "head.fc", cfg.stage_widths()[3],
                                          cfg.num_classes, LinearLayer::Init::XavierUniform,
                                          rng_);
    graph_.name = "resnet18";
    describe_backbone(graph_, true, false);
    graph_.layers.push_back({"pool", "global_avg_pool", false});
    graph_.layers.push_back({"linear", "head.fc", false});
  }

  ForwardResult forward(const Tensor& x, Mode mode) override {
    check_input(x);
    std::vector<Tensor> taps = backbone_->forward(x, mode);
    Tensor pooled = global_avg_pool(taps.back());
    return ForwardResult{head_->forward(pooled), {}};
  }

 private:
  Rng rng_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<LinearLayer> head_;
};

class GradAttnModel final : public ClassifierModel {
 public:
  GradAttnModel(const WidthConfig& cfg, const EncoderConfig& enc, uint64_t seed) : rng_(seed) {
    cfg.validate();
    enc.validate();
    cfg_ = cfg;
    backbone_ = std::make_unique<Backbone>(params_, cfg, /*with_skips=*/false, rng_);
    const auto tw = cfg.tap_widths();
    for (size_t i = 0; i < tw.size(); ++i) {
      projs_.emplace_back(params_, "proj.t" + std::to_string(i), tw[i], enc.embed_dim,
                          LinearLayer::Init::XavierUniform, rng_);
    }
    encoder_ = std::make_unique<TransformerEncoder>(params_, "encoder", enc,
                                                    /*seq_len=*/5, rng_);
    head_ = std::make_unique<LinearLayer>(params_, "head.fc", enc.embed_dim, cfg.num_classes,
                                          LinearLayer::Init::XavierUniform, rng_);
    graph_.name = "gradattn";
    describe_backbone(graph_, false, true);
    for (int i = 0; i < 5; ++i) {
      graph_.layers.push_back({"proj", "proj.t" + std::to_string(i), false});
    }
    for (int l = 0; l < enc.depth; ++l) {
      graph_.layers.push_back({"encoder_block", "encoder.l" + std::to_string(l), false});
    }
    graph_.layers.push_back({"mean_tokens", "head.pool", false});
    graph_.layers.push_back({"linear", "head.fc", false});
  }

  ForwardResult forward(const Tensor& x, Mode mode) override {
    check_input(x);
    std::vector<Tensor> taps = backbone_->forward(x, mode);
    Tensor tokens = extract_and_project(taps, projs_);  // [B,5,d]
    tokens = encoder_->forward(tokens);
    Tensor pooled = mean_axis(tokens, 1);  // mean over the 5 tokens
    return ForwardResult{head_->forward(pooled), std::move(taps)};
  }

 private:
  Rng rng_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<LinearLayer> projs_;
  std::unique_ptr<TransformerEncoder> encoder_;
  std::unique_ptr<LinearLayer> head_;
};

}  // namespace

// ---------------------------------------------------------------------------
// ClassifierModel
// ---------------------------------------------------------------------------
void ClassifierModel::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) != cfg_.input_size ||
      x.dim(3) != cfg_.input_size) {
    throw std::invalid_argument(name() + ": expected input [B," +
                                std::to_string(cfg_.input_channels) + "," +
                                std::to_string(cfg_.input_size) + "," +
                                std::to_string(cfg_.input_size) + "], got " +
                                shape_str(x.shape()));
  }
}

std::map<std::string, int64_t> ClassifierModel::count_params() const {
  std::map<std::string, int64_t> counts{
      {"backbone", 0}, {"projections", 0}, {"encoder", 0}, {"head", 0}};
  int64_t total = 0;
  for (const auto& [pname, t] : params_.items()) {
    const int64_t n = t.numel();
    total += n;
    if (pname.rfind("backbone.", 0) == 0) {
      counts["backbone"] += n;
    } else if (pname.rfind("proj.", 0) == 0) {
      counts["projections"] += n;
    } else if (pname.rfind("encoder.", 0) == 0) {
      counts["encoder"] += n;
    } else if (pname.rfind("head.", 0) == 0) {
      counts["head"] += n;
    } else {
      throw std::logic_error("count_params: parameter '" + pname + "' has no group");
    }
  }
  counts["total"] = total;
  return counts;
}

std::unique_ptr<ClassifierModel> build_resnet18_lite(const WidthConfig& cfg, uint64_t seed) {
  return std::make_unique<ResNet18Lite>(cfg, seed);
}

std::unique_ptr<ClassifierModel> build_gradattn(const WidthConfig& cfg, const EncoderConfig& enc,
                                                uint64_t seed) {
  return std::make_unique<GradAttnModel>(cfg, enc, seed);
}

std::unique_ptr<ClassifierModel> build_model(const std::string& model, const WidthConfig& cfg,
                                             const EncoderConfig& enc, uint64_t seed) {
  if (model == "resnet18") return build_resnet18_lite(cfg, seed);
  if (model == "gradattn") return build_gradattn(cfg, enc, seed);
  throw std::invalid_argument("unknown model '" + model + "' (expected resnet18|gradattn)");
}

Tensor extract_and_project(const std::vector<Tensor>& taps,
                           const std::vector<LinearLayer>& projs) {
  if (taps.size() != projs.size() || taps.empty()) {
    throw std::invalid_argument("extract_and_project: got " + std::to_string(taps.size()) +
                                " taps for " + std::to_string(projs.size()) + " projections");
  }
  std::vector<Tensor> tokens;
  tokens.reserve(taps.size());
  for (size_t i = 0; i < taps.size(); ++i) {
    const Tensor& f = taps[i];
    if (f.rank() != 4 || f.dim(1) != projs[i].w.dim(1)) {
      throw std::invalid_argument("extract_and_project: tap " + std::to_string(i) + " shape " +
                                  shape_str(f.shape()) + " does not match projection input dim " +
                                  std::to_string(projs[i].w.dim(1)));
    }
    tokens.push_back(projs[i].forward(global_avg_pool(f)));
  }
  return stack_tokens(tokens);
}

}  // namespace gradattn
