#pragma once

#include <optional>
#include <vector>

#include "json.hpp"

#include "gradattn/tensor.hpp"

namespace gradattn {

// Softmaxed predictions with ground truth. Construction validates that every
// row sums to 1 within 1e-5 and labels lie in [0,K).
struct PredictionSet {
  Tensor probs;  // [N,K]
  std::vector<int> labels;

  static PredictionSet make(Tensor probs, std::vector<int> labels);
  int64_t size() const { return probs.dim(0); }
  int64_t classes() const { return probs.dim(1); }
  // Argmax with ties broken toward the lowest class index.
  int predicted(int64_t row) const;
  double confidence(int64_t row) const;  // max probability
};

// Fraction of rows whose true label ranks among the k highest probabilities
// (ties resolved toward lower class indices). Requires 1 <= k <= K.
double topk_accuracy(const PredictionSet& preds, int k);

enum class Averaging { Macro, Weighted };

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Per-class precision/recall/F1 from argmax predictions; 0/0 terms define to
// 0. Macro = unweighted class mean, Weighted = support-weighted mean.
Prf precision_recall_f1(const PredictionSet& preds, Averaging avg);

// Eq.-6 style ECE with equal-width confidence bins over (0,1]:
// bin m covers ((m-1)/M, m/M]; empty bins contribute 0.
double expected_calibration_error(const PredictionSet& preds, int bins = 15);

// |train_acc - val_acc|; both must lie in [0,1].
double generalization_gap(double train_acc, double val_acc);

struct MetricBundle {
  double top1 = 0.0, top3 = 0.0, top5 = 0.0;
  Prf macro, weighted;
  double ece = 0.0;
  std::optional<double> generalization_gap;
};

// top-3/top-5 use k = min(k, K) so the bundle is defined for tiny class
// counts.
MetricBundle compute_metric_bundle(const PredictionSet& preds);

nlohmann::json metric_bundle_json(const MetricBundle& b);
MetricBundle metric_bundle_from_json(const nlohmann::json& j);

}  // namespace gradattn
