#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradattn/params.hpp"

namespace gradattn {

struct LayerGradRecord {
  std::string layer;
  double grad_l2_norm = 0.0;
  int64_t step = 0;
};

// One record per parameterized layer (parameters grouped by name up to the
// final dot), norm over the concatenation of that layer's parameter grads.
// Throws std::invalid_argument naming the layer if any grad is missing.
std::vector<LayerGradRecord> collect_layer_grad_norms(const ParamStore& params, int64_t step);

struct GradReport {
  std::vector<LayerGradRecord> records;
  double lo = 1e-6, hi = 10.0;  // closed healthy interval
  int64_t healthy = 0;
  double ghs = 0.0;  // healthy / total, exactly
  std::vector<std::string> vanishing_layers;   // norm < lo
  std::vector<std::string> exploding_layers;   // norm > hi, including non-finite
  std::vector<std::string> nonfinite_layers;   // subset of exploding, reported separately
  // Stats over the finite norms in the record set.
  double avg_norm = 0.0, min_norm = 0.0, max_norm = 0.0, std_norm = 0.0;
};

GradReport gradient_health_score(const std::vector<LayerGradRecord>& records, double lo = 1e-6,
                                 double hi = 10.0);

// Per-step capture accumulated over a run.
struct GradFlowHistory {
  std::vector<LayerGradRecord> records;  // append order = capture order
  void add(const std::vector<LayerGradRecord>& step_records);
  std::vector<int64_t> steps() const;                        // distinct, in order
  std::vector<LayerGradRecord> at_step(int64_t step) const;
};

// CSV with header "step,layer,grad_l2_norm"; norms printed so they re-parse
// bit-exactly.
std::string grad_flow_csv(const GradFlowHistory& history);
GradFlowHistory parse_grad_flow_csv(const std::string& csv);

// Aggregate a multi-step history into a single report: per layer, the mean
// norm over steps (layer order = first appearance).
GradReport aggregate_history(const GradFlowHistory& history, double lo = 1e-6, double hi = 10.0);

nlohmann::json grad_report_json(const GradReport& report);

}  // namespace gradattn
