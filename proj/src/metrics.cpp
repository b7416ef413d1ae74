#include "cardio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cardio/error.hpp"

namespace cardio {

std::size_t predicted_class(const std::vector<double>& scores) {
  if (scores.empty()) throw Error("metrics: empty score vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

namespace {

std::size_t class_count(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error("metrics: no records");
  const std::size_t K = records.front().scores.size();
  for (const auto& r : records) {
    if (r.scores.size() != K) throw Error("metrics: records disagree on the class count");
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= K) {
      throw Error("metrics: label " + std::to_string(r.label) + " outside [0, " + std::to_string(K) + ")");
    }
  }
  return K;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

ConfusionMetrics confusion_metrics(const std::vector<EvalRecord>& records) {
  const std::size_t K = class_count(records);
  std::vector<double> tp(K, 0.0), predicted(K, 0.0), actual(K, 0.0);
  double correct = 0.0;
  for (const auto& r : records) {
    const std::size_t p = predicted_class(r.scores);
    const auto y = static_cast<std::size_t>(r.label);
    predicted[p] += 1;
    actual[y] += 1;
    if (p == y) {
      tp[y] += 1;
      correct += 1;
    }
  }
  ConfusionMetrics m;
  m.accuracy = correct / static_cast<double>(records.size());
  std::size_t present = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (predicted[k] == 0 && actual[k] == 0) continue;
    ++present;
    const double p = ratio(tp[k], predicted[k]);
    const double r = ratio(tp[k], actual[k]);
    m.precision += p;
    m.recall += r;
    m.f1 += ratio(2 * p * r, p + r);
  }
  m.precision /= static_cast<double>(present);
  m.recall /= static_cast<double>(present);
  m.f1 /= static_cast<double>(present);
  return m;
}

double auroc_macro(const std::vector<EvalRecord>& records) {
  const std::size_t K = class_count(records);
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return records[a].scores[k] < records[b].scores[k]; });
    // Mann-Whitney: sum of midranks of the positives.
    double rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && records[order[j]].scores[k] == records[order[i]].scores[k]) ++j;
      const double midrank = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t t = i; t < j; ++t) {
        if (static_cast<std::size_t>(records[order[t]].label) == k) {
          rank_sum += midrank;
          ++positives;
        }
      }
      i = j;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) continue;
    const double P = static_cast<double>(positives), N = static_cast<double>(negatives);
    total += (rank_sum - P * (P + 1) / 2) / (P * N);
    ++counted;
  }
  if (counted == 0) throw Error("auroc: no class has both positives and negatives");
  return total / static_cast<double>(counted);
}

double auprc_macro(const std::vector<EvalRecord>& records) {
  const std::size_t K = class_count(records);
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t positives = 0;
    for (const auto& r : records) positives += static_cast<std::size_t>(r.label) == k;
    if (positives == 0) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return records[a].scores[k] > records[b].scores[k]; });
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && records[order[j]].scores[k] == records[order[i]].scores[k]) {
        tp += static_cast<std::size_t>(records[order[j]].label) == k;
        ++j;
      }
      const double recall = static_cast<double>(tp) / static_cast<double>(positives);
      const double precision = static_cast<double>(tp) / static_cast<double>(j);
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
      i = j;
    }
    total += ap;
    ++counted;
  }
  if (counted == 0) throw Error("auprc: no class has a positive record");
  return total / static_cast<double>(counted);
}

const std::vector<std::string>& MetricSet::names() {
  static const std::vector<std::string> n = {"accuracy", "precision", "recall", "f1", "auroc", "auprc"};
  return n;
}

std::vector<double> MetricSet::values() const { return {accuracy, precision, recall, f1, auroc, auprc}; }

MetricSet evaluate_records(const std::vector<EvalRecord>& records) {
  const auto c = confusion_metrics(records);
  MetricSet m{c.accuracy, c.precision, c.recall, c.f1, 0.0, 0.0};
  m.auroc = auroc_macro(records);
  m.auprc = auprc_macro(records);
  return m;
}

std::vector<MetricSummary> aggregate(const std::vector<MetricSet>& per_seed) {
  if (per_seed.empty()) throw Error("aggregate: no runs");
  std::vector<MetricSummary> out;
  for (std::size_t i = 0; i < MetricSet::names().size(); ++i) {
    double mean = 0.0;
    for (const auto& m : per_seed) mean += m.values()[i];
    mean /= static_cast<double>(per_seed.size());
    double var = 0.0;
    for (const auto& m : per_seed) var += (m.values()[i] - mean) * (m.values()[i] - mean);
    var /= static_cast<double>(per_seed.size());
    out.push_back({MetricSet::names()[i], mean, std::sqrt(var)});
  }
  return out;
}

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * mean, 100.0 * stddev);
  return buf;
}

std::string format_report(const std::vector<MetricSummary>& summary) {
  std::string out;
  char buf[128];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t", s.name.c_str(), s.mean, s.stddev);
    out += buf + format_mean_std(s.mean, s.stddev) + "\n";
  }
  return out;
}

}  // namespace cardio
