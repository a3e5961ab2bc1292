#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "gradattn/metrics.hpp"
#include "gradattn/tensor.hpp"

using namespace gradattn;

namespace {

// Random softmaxed prediction sets used as property-test fixtures.
PredictionSet random_preds(std::mt19937_64& gen, int64_t n, int64_t k) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> probs(size_t(n * k));
  std::vector<int> labels(size_t(n), 0);
  for (int64_t r = 0; r < n; ++r) {
    double z = 0.0;
    for (int64_t c = 0; c < k; ++c) z += probs[size_t(r * k + c)] = u(gen);
    for (int64_t c = 0; c < k; ++c) probs[size_t(r * k + c)] /= z;
    labels[size_t(r)] = int(gen() % uint64_t(k));
  }
  return PredictionSet::make(Tensor::from_data({n, k}, std::move(probs)), std::move(labels));
}

// Brute-force P/R/F1 straight from the confusion matrix definition.
Prf prf_bruteforce(const PredictionSet& p, Averaging avg) {
  int64_t K = p.classes();
  std::vector<double> tp(size_t(K), 0.0), fp(size_t(K), 0.0), fn(size_t(K), 0.0),
      support(size_t(K), 0.0);
  for (int64_t r = 0; r < p.size(); ++r) {
    int y = p.labels[size_t(r)], yhat = p.predicted(r);
    support[size_t(y)] += 1;
    if (y == yhat) {
      tp[size_t(y)] += 1;
    } else {
      fp[size_t(yhat)] += 1;
      fn[size_t(y)] += 1;
    }
  }
  auto safe = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
  Prf out;
  double wsum = 0.0;
  for (int64_t c = 0; c < K; ++c) {
    double prec = safe(tp[size_t(c)], tp[size_t(c)] + fp[size_t(c)]);
    double rec = safe(tp[size_t(c)], tp[size_t(c)] + fn[size_t(c)]);
    double f1 = safe(2 * prec * rec, prec + rec);
    double w = avg == Averaging::Macro ? 1.0 : support[size_t(c)];
    out.precision += w * prec;
    out.recall += w * rec;
    out.f1 += w * f1;
    wsum += w;
  }
  out.precision /= wsum;
  out.recall /= wsum;
  out.f1 /= wsum;
  return out;
}

}  // namespace

TEST_CASE("prediction set validates rows and labels") {
  CHECK_THROWS_AS(PredictionSet::make(Tensor::from_data({1, 2}, {0.7, 0.7}), {0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(PredictionSet::make(Tensor::from_data({1, 2}, {0.5, 0.5}), {2}),
                  std::invalid_argument);
  CHECK_THROWS_AS(PredictionSet::make(Tensor::from_data({1, 2}, {0.5, 0.5}), {0, 1}),
                  std::invalid_argument);

  PredictionSet p = PredictionSet::make(Tensor::from_data({2, 3}, {0.2, 0.5, 0.3,  //
                                                                   0.4, 0.4, 0.2}),
                                        {1, 2});
  CHECK(p.predicted(0) == 1);
  CHECK(p.predicted(1) == 0);  // tie -> lowest index
  CHECK(p.confidence(0) == 0.5);
}

TEST_CASE("topk accuracy on a hand fixture") {
  PredictionSet p = PredictionSet::make(Tensor::from_data({3, 4},
                                                          {0.1, 0.2, 0.3, 0.4,   //
                                                           0.4, 0.3, 0.2, 0.1,   //
                                                           0.25, 0.25, 0.25, 0.25}),
                                        {3, 2, 1});
  CHECK(topk_accuracy(p, 1) == doctest::Approx(1.0 / 3));
  CHECK(topk_accuracy(p, 2) == doctest::Approx(2.0 / 3));  // row2 ties: top-2 = {0,1}
  CHECK(topk_accuracy(p, 3) == doctest::Approx(3.0 / 3));
  CHECK_THROWS_AS(topk_accuracy(p, 0), std::invalid_argument);
  CHECK_THROWS_AS(topk_accuracy(p, 5), std::invalid_argument);
}

TEST_CASE("topk is monotone in k over 1000 random fixtures") {
  std::mt19937_64 gen(424242);
  for (int trial = 0; trial < 1000; ++trial) {
    int64_t n = 1 + int64_t(gen() % 12);
    int64_t k = 2 + int64_t(gen() % 8);
    PredictionSet p = random_preds(gen, n, k);
    double prev = 0.0;
    for (int kk = 1; kk <= int(k); ++kk) {
      double acc = topk_accuracy(p, kk);
      CHECK(acc >= prev);
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
      prev = acc;
    }
    CHECK(prev == 1.0);  // top-K over all classes always hits
  }
}

TEST_CASE("prf matches the confusion-matrix brute force") {
  std::mt19937_64 gen(31337);
  for (int trial = 0; trial < 200; ++trial) {
    PredictionSet p = random_preds(gen, 3 + int64_t(gen() % 40), 2 + int64_t(gen() % 6));
    for (Averaging avg : {Averaging::Macro, Averaging::Weighted}) {
      Prf got = precision_recall_f1(p, avg);
      Prf want = prf_bruteforce(p, avg);
      CHECK(std::abs(got.precision - want.precision) <= 1e-9);
      CHECK(std::abs(got.recall - want.recall) <= 1e-9);
      CHECK(std::abs(got.f1 - want.f1) <= 1e-9);
    }
  }
}

TEST_CASE("weighted recall equals top-1 accuracy") {
  std::mt19937_64 gen(777);
  for (int trial = 0; trial < 100; ++trial) {
    PredictionSet p = random_preds(gen, 5 + int64_t(gen() % 50), 2 + int64_t(gen() % 9));
    CHECK(std::abs(precision_recall_f1(p, Averaging::Weighted).recall - topk_accuracy(p, 1)) <=
          1e-9);
  }
}

TEST_CASE("prf hand fixture with an absent class") {
  // Class 2 never appears and is never predicted: contributes 0/0 -> 0 to the
  // macro average but weight 0 to the weighted one.
  PredictionSet p = PredictionSet::make(Tensor::from_data({4, 3},
                                                          {0.8, 0.1, 0.1,   //
                                                           0.8, 0.1, 0.1,   //
                                                           0.1, 0.8, 0.1,   //
                                                           0.8, 0.1, 0.1}),
                                        {0, 0, 1, 1});
  // preds: 0,0,1,0; class0: tp=2 fp=1 -> P=2/3 R=1; class1: tp=1 fn=1 -> P=1 R=1/2.
  Prf macro = precision_recall_f1(p, Averaging::Macro);
  CHECK(macro.precision == doctest::Approx((2.0 / 3 + 1.0 + 0.0) / 3).epsilon(1e-12));
  CHECK(macro.recall == doctest::Approx((1.0 + 0.5 + 0.0) / 3).epsilon(1e-12));
  Prf weighted = precision_recall_f1(p, Averaging::Weighted);
  CHECK(weighted.precision == doctest::Approx((2 * (2.0 / 3) + 2 * 1.0) / 4).epsilon(1e-12));
  CHECK(weighted.recall == doctest::Approx((2 * 1.0 + 2 * 0.5) / 4).epsilon(1e-12));
}

TEST_CASE("ece is zero when confidence equals accuracy everywhere") {
  // Two-class rows with confidence c: make exactly a fraction c of the rows
  // with that confidence correct. Use c = 0.75 with 4 rows per block.
  std::vector<double> probs;
  std::vector<int> labels;
  for (int rep = 0; rep < 25; ++rep)
    for (int i = 0; i < 4; ++i) {
      probs.push_back(0.75);
      probs.push_back(0.25);
      labels.push_back(i < 3 ? 0 : 1);  // 3 of 4 correct
    }
  PredictionSet p = PredictionSet::make(Tensor::from_data({100, 2}, std::move(probs)),
                                        std::move(labels));
  CHECK(std::abs(expected_calibration_error(p, 15)) <= 1e-9);
}

TEST_CASE("ece is one on the all-confident-all-wrong fixture") {
  std::vector<double> probs;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    probs.push_back(1.0);
    probs.push_back(0.0);
    labels.push_back(1);  // predicted 0, never true
  }
  PredictionSet p = PredictionSet::make(Tensor::from_data({10, 2}, std::move(probs)),
                                        std::move(labels));
  CHECK(expected_calibration_error(p, 15) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ece respects bin edges: bin m covers ((m-1)/M, m/M]") {
  NumericModeGuard g(NumericMode::Float64);  // keep 0.6 off the f32 grid snap
  // M=2: confidence exactly 0.5 lands in the first bin.
  std::vector<double> probs{0.5, 0.5, 0.6, 0.4};
  PredictionSet p = PredictionSet::make(Tensor::from_data({2, 2}, std::move(probs)), {0, 1});
  // Row0 conf 0.5 correct(tie->0); row1 conf 0.6 wrong.
  // Bin1 (0,0.5]: n=1, acc 1, conf 0.5 -> gap 0.5, weight 1/2.
  // Bin2 (0.5,1]: n=1, acc 0, conf 0.6 -> gap 0.6, weight 1/2.
  CHECK(expected_calibration_error(p, 2) == doctest::Approx(0.55).epsilon(1e-12));
  CHECK_THROWS_AS(expected_calibration_error(p, 0), std::invalid_argument);
}

TEST_CASE("ece weighted-sum identity holds on random fixtures") {
  // ECE = sum_m (n_m/N) |acc_m - conf_m| recomputed independently here.
  std::mt19937_64 gen(555);
  for (int trial = 0; trial < 50; ++trial) {
    int bins = 1 + int(gen() % 20);
    PredictionSet p = random_preds(gen, 20 + int64_t(gen() % 100), 3);
    std::vector<double> acc(size_t(bins), 0.0), conf(size_t(bins), 0.0), cnt(size_t(bins), 0.0);
    for (int64_t r = 0; r < p.size(); ++r) {
      double c = p.confidence(r);
      int m = std::min(bins - 1, std::max(0, int(std::ceil(c * bins)) - 1));
      cnt[size_t(m)] += 1;
      conf[size_t(m)] += c;
      acc[size_t(m)] += p.predicted(r) == p.labels[size_t(r)] ? 1.0 : 0.0;
    }
    double want = 0.0;
    for (int m = 0; m < bins; ++m) {
      if (cnt[size_t(m)] == 0) continue;
      want += cnt[size_t(m)] / double(p.size()) *
              std::abs(acc[size_t(m)] / cnt[size_t(m)] - conf[size_t(m)] / cnt[size_t(m)]);
    }
    CHECK(expected_calibration_error(p, bins) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("generalization gap is |train - val| with domain checks") {
  CHECK(generalization_gap(0.9, 0.8) == doctest::Approx(0.1));
  CHECK(generalization_gap(0.7, 0.9) == doctest::Approx(0.2));
  CHECK(generalization_gap(1.0, 1.0) == 0.0);
  CHECK_THROWS_AS(generalization_gap(1.2, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(generalization_gap(0.5, -0.1), std::invalid_argument);
}

TEST_CASE("metric bundle composes the individual metrics and round-trips json") {
  std::mt19937_64 gen(99);
  PredictionSet p = random_preds(gen, 40, 4);
  MetricBundle b = compute_metric_bundle(p);
  CHECK(b.top1 == topk_accuracy(p, 1));
  CHECK(b.top3 == topk_accuracy(p, 3));
  CHECK(b.top5 == topk_accuracy(p, 4));  // clamped to K=4
  CHECK(b.macro.f1 == precision_recall_f1(p, Averaging::Macro).f1);
  CHECK(b.weighted.f1 == precision_recall_f1(p, Averaging::Weighted).f1);
  CHECK(b.ece == expected_calibration_error(p, 15));
  CHECK_FALSE(b.generalization_gap.has_value());

  b.generalization_gap = 0.125;
  nlohmann::json j = metric_bundle_json(b);
  CHECK(j.at("top1").get<double>() == b.top1);
  CHECK(j.at("precision_macro").get<double>() == b.macro.precision);
  CHECK(j.at("recall_weighted").get<double>() == b.weighted.recall);
  CHECK(j.at("ece").get<double>() == b.ece);
  CHECK(j.at("generalization_gap").get<double>() == 0.125);

  MetricBundle back = metric_bundle_from_json(j);
  CHECK(back.top1 == b.top1);
  CHECK(back.weighted.f1 == b.weighted.f1);
  CHECK(back.generalization_gap == b.generalization_gap);
}
