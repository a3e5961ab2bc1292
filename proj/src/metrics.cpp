#include "gradattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gradattn {

PredictionSet PredictionSet::make(Tensor probs, std::vector<int> labels) {
  if (probs.rank() != 2) {
    throw std::invalid_argument("prediction set: probs must be [N,K], got " +
                                shape_str(probs.shape()));
  }
  const int64_t N = probs.dim(0), K = probs.dim(1);
  if (static_cast<int64_t>(labels.size()) != N) {
    throw std::invalid_argument("prediction set: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(N) + " rows");
  }
  const auto& d = probs.data();
  for (int64_t r = 0; r < N; ++r) {
    double s = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      const double p = d[static_cast<size_t>(r * K + k)];
      if (!(p >= 0.0)) {
        throw std::invalid_argument("prediction set: negative or NaN probability in row " +
                                    std::to_string(r));
      }
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw std::invalid_argument("prediction set: row " + std::to_string(r) + " sums to " +
                                  std::to_string(s) + ", not 1");
    }
  }
  for (int l : labels) {
    if (l < 0 || l >= K) {
      throw std::invalid_argument("prediction set: label " + std::to_string(l) +
                                  " outside [0," + std::to_string(K) + ")");
    }
  }
  return PredictionSet{std::move(probs), std::move(labels)};
}

int PredictionSet::predicted(int64_t row) const {
  const int64_t K = classes();
  const double* p = probs.data().data() + row * K;
  int best = 0;
  for (int64_t k = 1; k < K; ++k) {
    if (p[k] > p[best]) best = static_cast<int>(k);  // strict: lowest index wins ties
  }
  return best;
}

double PredictionSet::confidence(int64_t row) const {
  return probs.data()[static_cast<size_t>(row * classes() + predicted(row))];
}

double topk_accuracy(const PredictionSet& preds, int k) {
  const int64_t N = preds.size(), K = preds.classes();
  if (k < 1 || k > K) {
    throw std::invalid_argument("topk_accuracy: k=" + std::to_string(k) + " outside [1," +
                                std::to_string(K) + "]");
  }
  int64_t hits = 0;
  for (int64_t r = 0; r < N; ++r) {
    const double* p = preds.probs.data().data() + r * K;
    const int label = preds.labels[static_cast<size_t>(r)];
    // label is in the top k iff fewer than k classes strictly beat it, with
    // lower-index ties ranked first.
    int rank = 0;
    for (int64_t c = 0; c < K; ++c) {
      if (c == label) continue;
      if (p[c] > p[label] || (p[c] == p[label] && c < label)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

Prf precision_recall_f1(const PredictionSet& preds, Averaging avg) {
  const int64_t N = preds.size(), K = preds.classes();
  std::vector<int64_t> tp(static_cast<size_t>(K), 0), fp(static_cast<size_t>(K), 0),
      fn(static_cast<size_t>(K), 0), support(static_cast<size_t>(K), 0);
  for (int64_t r = 0; r < N; ++r) {
    const int pred = preds.predicted(r);
    const int label = preds.labels[static_cast<size_t>(r)];
    ++support[static_cast<size_t>(label)];
    if (pred == label) {
      ++tp[static_cast<size_t>(label)];
    } else {
      ++fp[static_cast<size_t>(pred)];
      ++fn[static_cast<size_t>(label)];
    }
  }
  auto ratio = [](int64_t num, int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  Prf out;
  double weight_total = 0.0;
  for (int64_t c = 0; c < K; ++c) {
    const size_t i = static_cast<size_t>(c);
    const double p = ratio(tp[i], tp[i] + fp[i]);
    const double r = ratio(tp[i], tp[i] + fn[i]);
    const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    const double w =
        avg == Averaging::Macro ? 1.0 : static_cast<double>(support[i]);
    out.precision += w * p;
    out.recall += w * r;
    out.f1 += w * f1;
    weight_total += w;
  }
  if (weight_total > 0.0) {
    out.precision /= weight_total;
    out.recall /= weight_total;
    out.f1 /= weight_total;
  }
  return out;
}

double expected_calibration_error(const PredictionSet& preds, int bins) {
  if (bins < 1) throw std::invalid_argument("ece: bins must be >= 1");
  const int64_t N = preds.size();
  if (N == 0) throw std::invalid_argument("ece: empty prediction set");
  std::vector<int64_t> count(static_cast<size_t>(bins), 0);
  std::vector<double> conf_sum(static_cast<size_t>(bins), 0.0);
  std::vector<int64_t> correct(static_cast<size_t>(bins), 0);
  for (int64_t r = 0; r < N; ++r) {
    const double conf = preds.confidence(r);
    // bin m covers ((m-1)/M, m/M]; conf > 0 because it is a row max >= 1/K.
    int b = static_cast<int>(std::ceil(conf * bins)) - 1;
    b = std::clamp(b, 0, bins - 1);
    const size_t i = static_cast<size_t>(b);
    ++count[i];
    conf_sum[i] += conf;
    if (preds.predicted(r) == preds.labels[static_cast<size_t>(r)]) ++correct[i];
  }
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    const size_t i = static_cast<size_t>(b);
    if (count[i] == 0) continue;
    const double acc = static_cast<double>(correct[i]) / static_cast<double>(count[i]);
    const double conf = conf_sum[i] / static_cast<double>(count[i]);
    ece += (static_cast<double>(count[i]) / static_cast<double>(N)) * std::abs(acc - conf);
  }
  return ece;
}

double generalization_gap(double train_acc, double val_acc) {
  if (!(train_acc >= 0.0 && train_acc <= 1.0) || !(val_acc >= 0.0 && val_acc <= 1.0)) {
    throw std::invalid_argument("generalization_gap: accuracies must lie in [0,1]");
  }
  return std::abs(train_acc - val_acc);
}

MetricBundle compute_metric_bundle(const PredictionSet& preds) {
  const int K = static_cast<int>(preds.classes());
  MetricBundle b;
  b.top1 = topk_accuracy(preds, 1);
  b.top3 = topk_accuracy(preds, std::min(3, K));
  b.top5 = topk_accuracy(preds, std::min(5, K));
  b.macro = precision_recall_f1(preds, Averaging::Macro);
  b.weighted = precision_recall_f1(preds, Averaging::Weighted);
  b.ece = expected_calibration_error(preds);
  return b;
}

nlohmann::json metric_bundle_json(const MetricBundle& b) {
  nlohmann::json j{{"top1", b.top1},
                   {"top3", b.top3},
                   {"top5", b.top5},
                   {"precision_macro", b.macro.precision},
                   {"recall_macro", b.macro.recall},
                   {"f1_macro", b.macro.f1},
                   {"precision_weighted", b.weighted.precision},
                   {"recall_weighted", b.weighted.recall},
                   {"f1_weighted", b.weighted.f1},
                   {"ece", b.ece}};
  if (b.generalization_gap) j["generalization_gap"] = *b.generalization_gap;
  return j;
}

MetricBundle metric_bundle_from_json(const nlohmann::json& j) {
  MetricBundle b;
  b.top1 = j.at("top1").get<double>();
  b.top3 = j.at("top3").get<double>();
  b.top5 = j.at("top5").get<double>();
  b.macro = Prf{j.at("precision_macro").get<double>(), j.at("recall_macro").get<double>(),
                j.at("f1_macro").get<double>()};
  b.weighted = Prf{j.at("precision_weighted").get<double>(),
                   j.at("recall_weighted").get<double>(), j.at("f1_weighted").get<double>()};
  b.ece = j.at("ece").get<double>();
  if (j.contains("generalization_gap")) {
    b.generalization_gap = j.at("generalization_gap").get<double>();
  }
  return b;
}

}  // namespace gradattn
