#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradattn/attention.hpp"
#include "gradattn/layers.hpp"
#include "gradattn/params.hpp"
#include "gradattn/tensor.hpp"

namespace gradattn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
struct WidthConfig {
  int input_channels = 3;
  int input_size = 64;
  int num_classes = 200;
  double width_scale = 1.0;  // multiplies the ResNet-18 widths 64/64/128/256/512
  enum class Stem { Auto, Full, Compact } stem = Stem::Auto;

  // Full stem: 7x7 stride-2 conv + 3x3 stride-2 maxpool (ImageNet-style).
  // Compact stem: 3x3 stride-1 conv + 2x2 stride-2 maxpool for small inputs.
  bool full_stem() const;
  int stem_width() const { return stage_widths_impl()[0]; }
  std::array<int, 4> stage_widths() const;
  // Channel widths of the five tap points [stem, s1, s2, s3, s4].
  std::array<int, 5> tap_widths() const;

  void validate() const;

  static WidthConfig full(int num_classes = 200);
  static WidthConfig desk(int num_classes = 10);  // scale 1/4, 28px, 1 channel

 private:
  std::array<int, 5> stage_widths_impl() const;
};

// ---------------------------------------------------------------------------
// Graph metadata (for structural assertions and diagnostics)
// ---------------------------------------------------------------------------
struct LayerSpec {
  std::string kind;  // "stem", "basic_block", "plain_block", "pool", "proj", ...
  std::string name;
  bool has_skip_add = false;
};

struct ModelGraph {
  std::string name;
  std::vector<LayerSpec> layers;
  std::vector<int> tap_points;  // indices into layers; 5 entries for GradAttn
  int skip_add_count() const;
};

struct ForwardResult {
  Tensor logits;             // [B, num_classes]
  std::vector<Tensor> taps;  // GradAttn: 5 tap activations; baseline: empty
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------
class ClassifierModel {
 public:
  virtual ~ClassifierModel() = default;
  virtual ForwardResult forward(const Tensor& x, Mode mode) = 0;

  const std::string& name() const { return graph_.name; }
  const ModelGraph& graph() const { return graph_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const WidthConfig& width_config() const { return cfg_; }

  // Counts by group {backbone, projections, encoder, head} plus "total";
  // groups partition the parameters exactly.
  std::map<std::string, int64_t> count_params() const;

 protected:
  void check_input(const Tensor& x) const;
  WidthConfig cfg_;
  ModelGraph graph_;
  ParamStore params_;
};

std::unique_ptr<ClassifierModel> build_resnet18_lite(const WidthConfig& cfg, uint64_t seed);
std::unique_ptr<ClassifierModel> build_gradattn(const WidthConfig& cfg, const EncoderConfig& enc,
                                                uint64_t seed);
// Convenience dispatcher: model = "resnet18" | "gradattn".
std::unique_ptr<ClassifierModel> build_model(const std::string& model, const WidthConfig& cfg,
                                             const EncoderConfig& enc, uint64_t seed);

// Pool each tap to [B,c_i], project to d, and stack into [B,5,d] (Eq. 1
// pipeline). Throws on tap/projection channel mismatch.
Tensor extract_and_project(const std::vector<Tensor>& taps,
                           const std::vector<LinearLayer>& projs);

}  // namespace gradattn
