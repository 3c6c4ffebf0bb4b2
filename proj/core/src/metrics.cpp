#include "rswin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "rswin/config.hpp"
#include "rswin/errors.hpp"

namespace rswin {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names)
    : n_(num_classes), counts_(num_classes * num_classes, 0), names_(std::move(class_names)) {
  if (!names_.empty() && names_.size() != n_) {
    throw ShapeError("confusion matrix: " + std::to_string(names_.size()) + " names for " +
                     std::to_string(n_) + " classes");
  }
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::size_t> counts,
                                 std::vector<std::string> class_names)
    : ConfusionMatrix(num_classes, std::move(class_names)) {
  if (counts.size() != n_ * n_) {
    throw ShapeError("confusion matrix needs " + std::to_string(n_ * n_) + " counts, got " +
                     std::to_string(counts.size()));
  }
  counts_ = std::move(counts);
}

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<std::size_t>& truth,
                                                  const std::vector<std::size_t>& predicted,
                                                  std::size_t num_classes,
                                                  std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion matrix: label and prediction counts differ");
  }
  ConfusionMatrix cm(num_classes, std::move(class_names));
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t count) {
  if (truth >= n_ || predicted >= n_) {
    throw ShapeError("confusion matrix: class index out of range");
  }
  counts_[truth * n_ + predicted] += count;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t k = 0; k < n_; ++k) t += at(k, k);
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::size_t s = 0;
  for (std::size_t j = 0; j < n_; ++j) s += at(k, j);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < n_; ++i) s += at(i, k);
  return s;
}

std::string ConfusionMatrix::class_name(std::size_t k) const {
  return names_.empty() ? std::to_string(k) : names_.at(k);
}

double accuracy(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw DataError("accuracy of an empty confusion matrix");
  return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double f1_score(double precision, double sensitivity) {
  const double s = precision + sensitivity;
  return s > 0.0 ? 2.0 * precision * sensitivity / s : 0.0;
}

ClassMetrics per_class_prf(const ConfusionMatrix& cm, std::size_t k) {
  if (k >= cm.num_classes()) throw ShapeError("class index out of range");
  const double tp = static_cast<double>(cm.at(k, k));
  const std::size_t predicted = cm.col_sum(k);
  const std::size_t actual = cm.row_sum(k);
  ClassMetrics m;
  m.support = actual;
  if (predicted > 0) {
    m.precision = tp / static_cast<double>(predicted);
  } else {
    m.undefined = true;
  }
  if (actual > 0) {
    m.sensitivity = tp / static_cast<double>(actual);
  } else {
    m.undefined = true;
  }
  m.f1 = f1_score(m.precision, m.sensitivity);
  return m;
}

AveragedMetrics macro_metrics(const ConfusionMatrix& cm, Averaging mode) {
  AveragedMetrics out;
  const std::size_t n = cm.num_classes();
  if (n == 0) return out;
  double weight_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const ClassMetrics m = per_class_prf(cm, k);
    const double w = mode == Averaging::macro ? 1.0 : static_cast<double>(m.support);
    out.precision += w * m.precision;
    out.sensitivity += w * m.sensitivity;
    out.f1 += w * m.f1;
    weight_sum += w;
  }
  if (weight_sum > 0.0) {
    out.precision /= weight_sum;
    out.sensitivity /= weight_sum;
    out.f1 /= weight_sum;
  }
  return out;
}

void ScoredPredictions::validate() const {
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size()) {
    throw DataError("scored predictions: probabilities " + shape_str(probabilities.shape()) +
                    " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = num_classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) throw DataError("scored predictions: label out of range");
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = score(i, k);
      if (!(p >= 0.0 && p <= 1.0)) throw DataError("scored predictions: probability outside [0, 1]");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) throw DataError("scored predictions: row does not sum to 1");
  }
}

std::vector<std::size_t> ScoredPredictions::argmax() const {
  const std::size_t c = num_classes();
  std::vector<std::size_t> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (score(i, k) > score(i, best)) best = k;
    }
    out[i] = best;
  }
  return out;
}

namespace {

// Cumulative (tp, fp) after each group of tied scores, in descending order.
struct Step {
  double threshold;
  double tp;
  double fp;
};

std::vector<Step> threshold_steps(const ScoredPredictions& scores, std::size_t k,
                                  double& positives, double& negatives) {
  if (k >= scores.num_classes()) throw ShapeError("class index out of range");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores.score(a, k) > scores.score(b, k);
  });
  positives = 0.0;
  negatives = 0.0;
  for (auto l : scores.labels) (l == k ? positives : negatives) += 1.0;
  std::vector<Step> steps;
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < n;) {
    const double t = scores.score(order[i], k);
    while (i < n && scores.score(order[i], k) == t) {
      (scores.labels[order[i]] == k ? tp : fp) += 1.0;
      ++i;
    }
    steps.push_back({t, tp, fp});
  }
  return steps;
}

MetricValue mean_defined(const std::vector<MetricValue>& values) {
  MetricValue out;
  double n = 0.0;
  for (const auto& v : values) {
    if (!v.defined) continue;
    out.value += v.value;
    n += 1.0;
  }
  if (n > 0.0) {
    out.value /= n;
    out.defined = true;
  }
  return out;
}

}  // namespace

MetricValue roc_auc(const ScoredPredictions& scores, std::size_t k) {
  double pos = 0.0;
  double neg = 0.0;
  const auto steps = threshold_steps(scores, k, pos, neg);
  if (pos == 0.0 || neg == 0.0) return {};
  double area = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;
  for (const auto& s : steps) {
    const double x1 = s.fp / neg;
    const double y1 = s.tp / pos;
    area += (x1 - x0) * (y0 + y1) / 2.0;
    x0 = x1;
    y0 = y1;
  }
  return {area, true};
}

MetricValue pr_auc(const ScoredPredictions& scores, std::size_t k) {
  double pos = 0.0;
  double neg = 0.0;
  const auto steps = threshold_steps(scores, k, pos, neg);
  if (pos == 0.0) return {};
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& s : steps) {
    const double recall = s.tp / pos;
    ap += (recall - prev_recall) * (s.tp / (s.tp + s.fp));
    prev_recall = recall;
  }
  return {ap, true};
}

MetricValue macro_roc_auc(const ScoredPredictions& scores) {
  std::vector<MetricValue> v;
  for (std::size_t k = 0; k < scores.num_classes(); ++k) v.push_back(roc_auc(scores, k));
  return mean_defined(v);
}

MetricValue macro_pr_auc(const ScoredPredictions& scores) {
  std::vector<MetricValue> v;
  for (std::size_t k = 0; k < scores.num_classes(); ++k) v.push_back(pr_auc(scores, k));
  return mean_defined(v);
}

std::vector<CurvePoint> roc_curve(const ScoredPredictions& scores, std::size_t k) {
  double pos = 0.0;
  double neg = 0.0;
  const auto steps = threshold_steps(scores, k, pos, neg);
  std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (const auto& s : steps) {
    out.push_back({s.threshold, neg > 0.0 ? s.fp / neg : 0.0, pos > 0.0 ? s.tp / pos : 0.0});
  }
  return out;
}

std::vector<CurvePoint> pr_curve(const ScoredPredictions& scores, std::size_t k) {
  double pos = 0.0;
  double neg = 0.0;
  const auto steps = threshold_steps(scores, k, pos, neg);
  std::vector<CurvePoint> out;
  for (const auto& s : steps) {
    out.push_back({s.threshold, pos > 0.0 ? s.tp / pos : 0.0, s.tp / (s.tp + s.fp)});
  }
  return out;
}

std::pair<double, double> sensitivity_ci(double sensitivity, std::size_t n_pos) {
  if (n_pos == 0) throw ContractError("sensitivity interval needs at least one positive");
  if (!(sensitivity >= 0.0 && sensitivity <= 1.0)) {
    throw ContractError("sensitivity must lie in [0, 1]");
  }
  const double half =
      1.96 * std::sqrt(sensitivity * (1.0 - sensitivity) / static_cast<double>(n_pos));
  return {std::max(0.0, sensitivity - half), std::min(1.0, sensitivity + half)};
}

MetricsReport build_report(const ConfusionMatrix& cm, const ScoredPredictions& scores,
                           Averaging mode) {
  MetricsReport r;
  r.cm = cm;
  r.accuracy = accuracy(cm);
  r.macro = macro_metrics(cm, mode);
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const ClassMetrics m = per_class_prf(cm, k);
    r.per_class.push_back(m);
    r.roc_auc.push_back(roc_auc(scores, k));
    r.pr_auc.push_back(pr_auc(scores, k));
    r.sensitivity_ci.push_back(m.support > 0 ? sensitivity_ci(m.sensitivity, m.support)
                                             : std::pair{0.0, 0.0});
  }
  r.macro_roc_auc = mean_defined(r.roc_auc);
  r.macro_pr_auc = mean_defined(r.pr_auc);
  return r;
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt(const MetricValue& v) { return v.defined ? fixed(v.value) : "n/a"; }

std::string opt_csv(const MetricValue& v) { return v.defined ? format_double(v.value) : ""; }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string format_report(const MetricsReport& r) {
  std::size_t width = 5;
  for (std::size_t k = 0; k < r.cm.num_classes(); ++k) {
    width = std::max(width, r.cm.class_name(k).size());
  }
  auto pad = [&](std::string s) {
    s.resize(width, ' ');
    return s;
  };
  std::string out = pad("class") + "  precision  sensitivity  f1      support  sen_95ci         roc_auc  pr_auc\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    char line[256];
    std::snprintf(line, sizeof line, "  %-9s  %-11s  %-6s  %7zu  [%s, %s]  %-7s  %-6s%s\n",
                  fixed(m.precision).c_str(), fixed(m.sensitivity).c_str(), fixed(m.f1).c_str(),
                  m.support, fixed(r.sensitivity_ci[k].first).c_str(),
                  fixed(r.sensitivity_ci[k].second).c_str(), opt(r.roc_auc[k]).c_str(),
                  opt(r.pr_auc[k]).c_str(), m.undefined ? "  (undefined)" : "");
    out += pad(r.cm.class_name(k)) + line;
  }
  char line[256];
  std::snprintf(line, sizeof line, "  %-9s  %-11s  %-6s  %7zu  %-16s  %-7s  %-6s\n",
                fixed(r.macro.precision).c_str(), fixed(r.macro.sensitivity).c_str(),
                fixed(r.macro.f1).c_str(), r.cm.total(), "", opt(r.macro_roc_auc).c_str(),
                opt(r.macro_pr_auc).c_str());
  out += pad("macro") + line;
  out += "accuracy: " + fixed(r.accuracy, 2) + "%\n";
  return out;
}

void write_report_csv(const MetricsReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class,precision,sensitivity,f1,support,sen_ci_lo,sen_ci_hi,roc_auc,pr_auc,undefined\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    out << r.cm.class_name(k) << ',' << format_double(m.precision) << ','
        << format_double(m.sensitivity) << ',' << format_double(m.f1) << ',' << m.support << ','
        << format_double(r.sensitivity_ci[k].first) << ','
        << format_double(r.sensitivity_ci[k].second) << ',' << opt_csv(r.roc_auc[k]) << ','
        << opt_csv(r.pr_auc[k]) << ',' << (m.undefined ? 1 : 0) << '\n';
  }
  out << "macro," << format_double(r.macro.precision) << ',' << format_double(r.macro.sensitivity)
      << ',' << format_double(r.macro.f1) << ',' << r.cm.total() << ",,,"
      << opt_csv(r.macro_roc_auc) << ',' << opt_csv(r.macro_pr_auc) << ",0\n";
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "true\\predicted";
  for (std::size_t k = 0; k < cm.num_classes(); ++k) out << ',' << cm.class_name(k);
  out << '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    out << cm.class_name(i);
    for (std::size_t j = 0; j < cm.num_classes(); ++j) out << ',' << cm.at(i, j);
    out << '\n';
  }
}

void write_curve_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "threshold,x,y\n";
  for (const auto& p : points) {
    out << format_double(p.threshold) << ',' << format_double(p.x) << ',' << format_double(p.y)
        << '\n';
  }
}

}  // namespace rswin
