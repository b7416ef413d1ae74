#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cardio {

struct EvalRecord {
  int label = 0;
  std::vector<double> scores;  // class probabilities
};

/// Index of the largest score; ties go to the lowest index.
std::size_t predicted_class(const std::vector<double>& scores);

struct ConfusionMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
};

/// Macro averages run over the classes that occur as a label or a
/// prediction; a 0/0 precision or recall counts as 0.
ConfusionMetrics confusion_metrics(const std::vector<EvalRecord>& records);

/// One-vs-rest AUROC by rank sums, ties credited 1/2, averaged over classes
/// with at least one positive and one negative.
double auroc_macro(const std::vector<EvalRecord>& records);

/// One-vs-rest average precision over descending distinct thresholds,
/// averaged over classes with at least one positive.
double auprc_macro(const std::vector<EvalRecord>& records);

struct MetricSet {
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, auroc = 0.0, auprc = 0.0;

  static const std::vector<std::string>& names();
  std::vector<double> values() const;
};

MetricSet evaluate_records(const std::vector<EvalRecord>& records);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

std::vector<MetricSummary> aggregate(const std::vector<MetricSet>& per_seed);

/// Percent with two decimals: (0.92, 0.0163) -> "92.00±1.63".
std::string format_mean_std(double mean, double stddev);

/// One line per metric: "<name>\t<mean>\t<std>\t<mean±std>".
std::string format_report(const std::vector<MetricSummary>& summary);

}  // namespace cardio
