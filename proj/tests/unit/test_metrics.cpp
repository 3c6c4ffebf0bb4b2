#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "rswin/errors.hpp"
#include "rswin/metrics.hpp"
#include "rswin/random.hpp"
#include "support.hpp"

using namespace rswin;

namespace {

// Two-class predictions where column 1 holds the given scores.
ScoredPredictions binary(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  ScoredPredictions p;
  p.probabilities = Array({s.size(), 2});
  for (std::size_t i = 0; i < s.size(); ++i) {
    p.probabilities[i * 2] = 1.0 - s[i];
    p.probabilities[i * 2 + 1] = s[i];
  }
  p.labels = y;
  return p;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] == 1) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

// Average precision by recounting TP/FP from scratch at every distinct threshold.
double enumerated_ap(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double P = static_cast<double>(std::count(y.begin(), y.end(), 1u));
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, pp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        pp += 1.0;
        if (y[i] == 1) tp += 1.0;
      }
    }
    const double recall = tp / P;
    ap += (recall - prev_recall) * (tp / pp);
    prev_recall = recall;
  }
  return ap;
}

ConfusionMatrix permuted(const ConfusionMatrix& cm, const std::vector<std::size_t>& perm) {
  const std::size_t n = cm.num_classes();
  ConfusionMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.add(perm[i], perm[j], cm.at(i, j));
  }
  return out;
}

}  // namespace

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy(ConfusionMatrix(3, {4, 0, 0, 0, 2, 0, 0, 0, 9})), 100.0);
  EXPECT_EQ(accuracy(ConfusionMatrix(2, {5, 1, 1, 3})), 80.0);
  EXPECT_THROW(accuracy(ConfusionMatrix(3)), DataError);
}

TEST(F1, ReportedValue) {
  EXPECT_NEAR(f1_score(0.9604, 0.9621), 0.9613, 1e-4);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
  EXPECT_EQ(f1_score(1.0, 1.0), 1.0);
}

TEST(PerClass, HandComputedTwoClass) {
  const ConfusionMatrix cm(2, {3, 1, 2, 4});
  const ClassMetrics c0 = per_class_prf(cm, 0);
  const ClassMetrics c1 = per_class_prf(cm, 1);
  EXPECT_EQ(c0.precision, 3.0 / 5.0);
  EXPECT_EQ(c0.sensitivity, 3.0 / 4.0);
  EXPECT_EQ(c1.precision, 4.0 / 5.0);
  EXPECT_EQ(c1.sensitivity, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(c0.f1, 2 * 0.6 * 0.75 / 1.35);
  EXPECT_EQ(c0.support, 4u);
  const AveragedMetrics m = macro_metrics(cm);
  EXPECT_DOUBLE_EQ(m.precision, (0.6 + 0.8) / 2);
  EXPECT_DOUBLE_EQ(m.sensitivity, (0.75 + 4.0 / 6.0) / 2);
  EXPECT_DOUBLE_EQ(m.f1, (c0.f1 + c1.f1) / 2);
  EXPECT_NE(m.f1, f1_score(m.precision, m.sensitivity));
  const AveragedMetrics w = macro_metrics(cm, Averaging::weighted);
  EXPECT_DOUBLE_EQ(w.sensitivity, (4 * 0.75 + 6 * (4.0 / 6.0)) / 10);
}

TEST(PerClass, PerfectAndDegenerate) {
  const ConfusionMatrix cm(3, {5, 0, 0, 0, 3, 1, 0, 0, 0});
  const ClassMetrics perfect = per_class_prf(cm, 0);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.sensitivity, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_FALSE(perfect.undefined);
  // Class 2 has no actual members but one prediction: sensitivity undefined.
  const ClassMetrics c2 = per_class_prf(cm, 2);
  EXPECT_TRUE(c2.undefined);
  EXPECT_EQ(c2.precision, 0.0);
  EXPECT_EQ(c2.sensitivity, 0.0);
  EXPECT_EQ(c2.f1, 0.0);
  const ConfusionMatrix empty_class(3, {5, 0, 0, 0, 3, 0, 0, 0, 0});
  const ClassMetrics e = per_class_prf(empty_class, 2);
  EXPECT_TRUE(e.undefined);
  EXPECT_EQ(e.f1, 0.0);
}

TEST(Macro, IdenticalClassesGiveSameValue) {
  const ConfusionMatrix cm(3, {4, 1, 0, 0, 4, 1, 1, 0, 4});
  const ClassMetrics c = per_class_prf(cm, 0);
  const AveragedMetrics m = macro_metrics(cm);
  EXPECT_DOUBLE_EQ(m.precision, c.precision);
  EXPECT_DOUBLE_EQ(m.sensitivity, c.sensitivity);
  EXPECT_DOUBLE_EQ(m.f1, c.f1);
}

TEST(Macro, PermutationInvariance) {
  Rng rng = derive_rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 5);
    std::vector<std::size_t> counts(n * n);
    for (auto& c : counts) c = uniform_index(rng, 10);
    counts[0] += 1;
    const ConfusionMatrix cm(n, counts);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    const ConfusionMatrix pc = permuted(cm, perm);
    EXPECT_EQ(accuracy(cm), accuracy(pc));
    const AveragedMetrics a = macro_metrics(cm);
    const AveragedMetrics b = macro_metrics(pc);
    EXPECT_NEAR(a.f1, b.f1, 1e-15);
    EXPECT_NEAR(a.precision, b.precision, 1e-15);
    for (std::size_t k = 0; k < n; ++k) {
      const ClassMetrics x = per_class_prf(cm, k);
      const ClassMetrics y = per_class_prf(pc, perm[k]);
      EXPECT_EQ(x.precision, y.precision);
      EXPECT_EQ(x.sensitivity, y.sensitivity);
      EXPECT_EQ(x.f1, y.f1);
      EXPECT_GE(x.f1, 0.0);
      EXPECT_LE(x.f1, 1.0);
    }
  }
}

TEST(RocAuc, ExamplesAndUndefined) {
  EXPECT_EQ(roc_auc(binary({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}), 1).value, 1.0);
  EXPECT_EQ(roc_auc(binary({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 1).value, 0.5);
  EXPECT_EQ(roc_auc(binary({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 1).value, 0.0);
  const MetricValue u = roc_auc(binary({0.3, 0.6}, {1, 1}), 1);
  EXPECT_FALSE(u.defined);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  Rng rng = derive_rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    std::vector<double> s(n);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      s[i] = static_cast<double>(uniform_index(rng, 8)) / 8.0;
      y[i] = uniform_index(rng, 2);
    }
    y[0] = 0;
    y[1] = 1;
    const MetricValue v = roc_auc(binary(s, y), 1);
    ASSERT_TRUE(v.defined);
    EXPECT_NEAR(v.value, pairwise_auc(s, y), 1e-12);
  }
}

TEST(RocCurve, MonotoneAndEndpoints) {
  const auto p = binary({0.9, 0.4, 0.4, 0.2, 0.7, 0.1}, {1, 0, 1, 0, 1, 0});
  const auto curve = roc_curve(p, 1);
  ASSERT_GE(curve.size(), 2u);
  EXPECT_TRUE(std::isinf(curve.front().threshold));
  EXPECT_EQ(curve.front().x, 0.0);
  EXPECT_EQ(curve.front().y, 0.0);
  EXPECT_EQ(curve.back().x, 1.0);
  EXPECT_EQ(curve.back().y, 1.0);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    EXPECT_GE(curve[i].x, curve[i - 1].x);
    EXPECT_GE(curve[i].y, curve[i - 1].y);
    EXPECT_LT(curve[i].threshold, curve[i - 1].threshold);
  }
}

TEST(PrAuc, ExamplesAndOracle) {
  EXPECT_EQ(pr_auc(binary({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}), 1).value, 1.0);
  EXPECT_EQ(pr_auc(binary({0.9, 0.2, 0.5}, {1, 1, 1}), 1).value, 1.0);
  EXPECT_NEAR(pr_auc(binary({0.9, 0.8, 0.7}, {1, 0, 1}), 1).value, 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(pr_auc(binary({0.9, 0.8}, {0, 0}), 1).defined);
  Rng rng = derive_rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 30);
    std::vector<double> s(n);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 6)) / 6.0;
      y[i] = uniform_index(rng, 2);
    }
    y[0] = 1;
    EXPECT_NEAR(pr_auc(binary(s, y), 1).value, enumerated_ap(s, y), 1e-12);
  }
}

TEST(Macro, AucOverDefinedClassesOnly) {
  ScoredPredictions p;
  p.probabilities = Array({4, 3}, std::vector<double>{0.8, 0.1, 0.1, 0.6, 0.3, 0.1, 0.2, 0.7, 0.1,
                                                      0.3, 0.6, 0.1});
  p.labels = {0, 0, 1, 1};  // class 2 has no positives
  const MetricValue m = macro_roc_auc(p);
  ASSERT_TRUE(m.defined);
  EXPECT_NEAR(m.value, (roc_auc(p, 0).value + roc_auc(p, 1).value) / 2, 1e-15);
  EXPECT_FALSE(roc_auc(p, 2).defined);
}

TEST(Scores, Validation) {
  ScoredPredictions p = binary({0.2, 0.7}, {0, 1});
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.argmax(), (std::vector<std::size_t>{0, 1}));
  p.probabilities[0] = 0.5;
  EXPECT_THROW(p.validate(), DataError);
  p = binary({0.2, 1.2}, {0, 1});
  EXPECT_THROW(p.validate(), DataError);
  p = binary({0.2}, {0, 1});
  EXPECT_THROW(p.validate(), DataError);
}

TEST(SensitivityCi, ClosedForm) {
  const auto [lo, hi] = sensitivity_ci(0.5, 100);
  EXPECT_NEAR(lo, 0.5 - 0.098, 1e-12);
  EXPECT_NEAR(hi, 0.5 + 0.098, 1e-12);
  EXPECT_EQ(sensitivity_ci(1.0, 7), std::make_pair(1.0, 1.0));
  const auto [l2, h2] = sensitivity_ci(0.95, 10);
  EXPECT_EQ(h2, 1.0);
  EXPECT_LT(l2, 0.95);
  const auto w1 = sensitivity_ci(0.7, 100);
  const auto w4 = sensitivity_ci(0.7, 400);
  EXPECT_NEAR((w1.second - w1.first) / (w4.second - w4.first), 2.0, 1e-12);
  EXPECT_THROW(sensitivity_ci(0.5, 0), ContractError);
}

TEST(Report, CsvShapes) {
  testutil::TempDir dir("metrics");
  ScoredPredictions p;
  p.probabilities = Array({6, 3}, std::vector<double>{0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.1, 0.2, 0.7,
                                                      0.6, 0.3, 0.1, 0.3, 0.3, 0.4, 0.1, 0.8, 0.1});
  p.labels = {0, 1, 2, 0, 2, 2};
  const auto cm = ConfusionMatrix::from_predictions(p.labels, p.argmax(), 3, {"a", "b", "c"});
  const MetricsReport r = build_report(cm, p);
  EXPECT_NEAR(r.accuracy, 100.0 * 5 / 6, 1e-12);
  write_report_csv(r, dir / "m.csv");
  write_confusion_csv(cm, dir / "c.csv");
  write_curve_csv(roc_curve(p, 0), dir / "roc.csv");
  auto lines = [](const std::filesystem::path& f) {
    std::ifstream in(f);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  };
  const auto m = lines(dir / "m.csv");
  ASSERT_EQ(m.size(), 5u);
  EXPECT_EQ(m[1].substr(0, 2), "a,");
  EXPECT_EQ(m.back().substr(0, 6), "macro,");
  const auto c = lines(dir / "c.csv");
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[1], "a,2,0,0");
  EXPECT_EQ(lines(dir / "roc.csv").front(), "threshold,x,y");
  EXPECT_FALSE(format_report(r).empty());
}
