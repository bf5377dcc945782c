#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vitforge {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts relative to `positive_class`; every other label is negative.
ConfusionCounts confusion_binary(std::span<const int> predicted, std::span<const int> truth,
                                 int positive_class);

/// Rates from a binary confusion. A zero denominator yields 0 and sets the
/// matching flag instead of failing.
struct BinaryMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double specificity = 0;
  double f1 = 0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool specificity_degenerate = false;
  bool f1_degenerate = false;

  bool degenerate() const {
    return precision_degenerate || recall_degenerate || specificity_degenerate || f1_degenerate;
  }
};

BinaryMetrics binary_metrics(const ConfusionCounts& c);

/// Area under the ROC curve as the Mann-Whitney statistic
/// P(s⁺ > s⁻) + ½·P(s⁺ = s⁻), by a sorted sweep over tie groups.
double roc_auc(std::span<const double> scores, std::span<const int> truth, int positive_class);

/// K×K counts, rows = true class, columns = predicted class.
class MultiClassConfusion {
 public:
  explicit MultiClassConfusion(std::size_t num_classes);
  MultiClassConfusion(std::size_t num_classes, std::span<const int> predicted,
                      std::span<const int> truth);

  void add(int truth, int predicted);
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * k_ + predicted]; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }
  std::size_t num_classes() const { return k_; }
  std::uint64_t total() const;
  /// One-vs-rest counts for class c.
  ConfusionCounts one_vs_rest(std::size_t c) const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct MacroMetrics {
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  double macro_specificity = 0;
  bool degenerate = false;
};

/// Unweighted means of per-class one-vs-rest rates; macro_f1 averages the
/// per-class F1 values.
MacroMetrics macro_metrics(const MultiClassConfusion& m);

/// One row of a fold report. `auc` is set only for two-class tasks.
struct MetricsRow {
  std::string fold;
  double accuracy = 0;
  double precision = 0;
  double sensitivity = 0;
  double f1 = 0;
  double specificity = 0;
  std::optional<double> auc;
  bool degenerate = false;
};

struct MetricsReport {
  std::vector<MetricsRow> folds;
  MetricsRow average;
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Softmax over one logit row, in double precision.
std::vector<double> softmax(std::span<const double> logits);

/// Scores a model given its logits for every sample. For K = 2 the row holds
/// binary metrics for `positive_class` plus AUC on its softmax probability;
/// for K > 2 it holds accuracy and macro averages.
MetricsRow evaluate(const std::function<std::vector<double>(std::size_t)>& logits_for,
                    std::span<const int> truth, std::size_t num_classes, int positive_class,
                    std::string fold_label = "");

/// Column-wise arithmetic mean; AUC is averaged only when every fold has one.
MetricsRow average_rows(std::span<const MetricsRow> rows);

MetricsReport aggregate_folds(std::vector<MetricsRow> folds);

/// CSV with header fold,accuracy,precision,sensitivity,f1,specificity,auc;
/// fold rows, then an "average" row. Empty auc cell when absent.
std::string metrics_csv(const MetricsReport& report);

/// Single-row CSV (same header) for one evaluation.
std::string metrics_csv(const MetricsRow& row);

/// Shortest round-trip decimal for a double.
std::string format_number(double v);

}  // namespace vitforge
