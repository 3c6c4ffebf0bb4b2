#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rswin/tensor.hpp"

namespace rswin {

// rows = true class, cols = predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names = {});
  // Row-major counts, num_classes^2 entries.
  ConfusionMatrix(std::size_t num_classes, std::vector<std::size_t> counts,
                  std::vector<std::string> class_names = {});

  static ConfusionMatrix from_predictions(const std::vector<std::size_t>& truth,
                                          const std::vector<std::size_t>& predicted,
                                          std::size_t num_classes,
                                          std::vector<std::string> class_names = {});

  std::size_t num_classes() const { return n_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted, std::size_t count = 1);
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t k) const;
  std::size_t col_sum(std::size_t k) const;
  // Falls back to the class index when no names were given.
  std::string class_name(std::size_t k) const;
  const std::vector<std::string>& class_names() const { return names_; }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> counts_;
  std::vector<std::string> names_;
};

// Percent, 100 * trace / total. Throws DataError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

// Harmonic mean; 0 when both are 0.
double f1_score(double precision, double sensitivity);

struct ClassMetrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true members of the class
  // Some denominator was zero; the affected values were set to 0.
  bool undefined = false;
};

ClassMetrics per_class_prf(const ConfusionMatrix& cm, std::size_t k);

enum class Averaging { macro, weighted };

struct AveragedMetrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
};

// Mean of the per-class values (F1 is the mean of per-class F1s). Weighted
// mode weights each class by its support.
AveragedMetrics macro_metrics(const ConfusionMatrix& cm, Averaging mode = Averaging::macro);

// probabilities[N, C], rows summing to 1.
struct ScoredPredictions {
  Array probabilities;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return probabilities.rank() == 2 ? probabilities.dim(1) : 0; }
  double score(std::size_t i, std::size_t k) const { return probabilities[i * num_classes() + k]; }
  // Throws DataError on shape mismatch, out-of-range probabilities or rows
  // not summing to 1 within 1e-6.
  void validate() const;
  std::vector<std::size_t> argmax() const;
};

struct MetricValue {
  double value = 0.0;
  bool defined = false;
};

// One-vs-rest ROC-AUC by trapezoids over all distinct thresholds; tied
// scores form a single diagonal step. Undefined without both positives and
// negatives.
MetricValue roc_auc(const ScoredPredictions& scores, std::size_t k);
// Average precision, sum over thresholds of (R_n - R_{n-1}) * P_n.
// Undefined without positives.
MetricValue pr_auc(const ScoredPredictions& scores, std::size_t k);
// Means over the classes where the value is defined.
MetricValue macro_roc_auc(const ScoredPredictions& scores);
MetricValue macro_pr_auc(const ScoredPredictions& scores);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;
  double y = 0.0;
};

// Points for descending thresholds. ROC is (fpr, tpr) starting at (0, 0);
// PR is (recall, precision).
std::vector<CurvePoint> roc_curve(const ScoredPredictions& scores, std::size_t k);
std::vector<CurvePoint> pr_curve(const ScoredPredictions& scores, std::size_t k);

// sen +- 1.96 * sqrt(sen (1 - sen) / n_pos), clamped to [0, 1].
std::pair<double, double> sensitivity_ci(double sensitivity, std::size_t n_pos);

struct MetricsReport {
  ConfusionMatrix cm;
  std::vector<ClassMetrics> per_class;
  AveragedMetrics macro;
  double accuracy = 0.0;
  std::vector<MetricValue> roc_auc;
  std::vector<MetricValue> pr_auc;
  MetricValue macro_roc_auc;
  MetricValue macro_pr_auc;
  std::vector<std::pair<double, double>> sensitivity_ci;
};

MetricsReport build_report(const ConfusionMatrix& cm, const ScoredPredictions& scores,
                           Averaging mode = Averaging::macro);

// Plain-text table for terminals.
std::string format_report(const MetricsReport& report);
// Header, one row per class, then a macro row.
void write_report_csv(const MetricsReport& report, const std::filesystem::path& path);
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
// threshold,x,y
void write_curve_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path);

}  // namespace rswin
