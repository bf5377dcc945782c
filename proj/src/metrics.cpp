#include "vitforge/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "vitforge/error.hpp"

namespace vitforge {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion_binary(std::span<const int> predicted, std::span<const int> truth,
                                 int positive_class) {
  if (predicted.size() != truth.size()) {
    throw ValidationError("confusion_binary: " + std::to_string(predicted.size()) +
                          " predictions for " + std::to_string(truth.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == positive_class;
    const bool t = truth[i] == positive_class;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

BinaryMetrics binary_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ValidationError("binary_metrics: empty confusion");
  BinaryMetrics m;
  bool unused = false;
  m.accuracy = ratio(c.tp + c.tn, c.total(), unused);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_degenerate);
  m.recall = ratio(c.tp, c.tp + c.fn, m.recall_degenerate);
  m.specificity = ratio(c.tn, c.tn + c.fp, m.specificity_degenerate);
  // Harmonic mean of precision and recall, written on the counts so the
  // result is a single correctly rounded division.
  if (c.tp == 0) {
    m.f1 = 0.0;
    m.f1_degenerate = true;
  } else {
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, unused);
  }
  return m;
}

double roc_auc(std::span<const double> scores, std::span<const int> truth, int positive_class) {
  if (scores.size() != truth.size()) {
    throw ValidationError("roc_auc: " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(truth.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("roc_auc: non-finite score");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score order. Each positive beats every
  // negative already passed and ties with the negatives in its own group.
  double wins_x2 = 0;
  std::uint64_t negatives_below = 0, positives = 0, negatives = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::uint64_t pos = 0, neg = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      (truth[order[end]] == positive_class ? pos : neg) += 1;
      ++end;
    }
    wins_x2 += static_cast<double>(pos) * static_cast<double>(2 * negatives_below + neg);
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    start = end;
  }
  if (positives == 0 || negatives == 0) {
    throw ValidationError("roc_auc: undefined unless both classes are present");
  }
  return wins_x2 / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

MultiClassConfusion::MultiClassConfusion(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) throw ValidationError("confusion matrix needs at least two classes");
}

MultiClassConfusion::MultiClassConfusion(std::size_t num_classes, std::span<const int> predicted,
                                         std::span<const int> truth)
    : MultiClassConfusion(num_classes) {
  if (predicted.size() != truth.size()) {
    throw ValidationError("confusion: prediction/label length mismatch");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

void MultiClassConfusion::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= k_ ||
      static_cast<std::size_t>(predicted) >= k_) {
    throw ValidationError("confusion: label outside [0," + std::to_string(k_) + ")");
  }
  ++at(static_cast<std::size_t>(truth), static_cast<std::size_t>(predicted));
}

std::uint64_t MultiClassConfusion::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionCounts MultiClassConfusion::one_vs_rest(std::size_t c) const {
  ConfusionCounts out;
  for (std::size_t t = 0; t < k_; ++t)
    for (std::size_t p = 0; p < k_; ++p) {
      const std::uint64_t n = at(t, p);
      if (t == c && p == c) out.tp += n;
      else if (p == c) out.fp += n;
      else if (t == c) out.fn += n;
      else out.tn += n;
    }
  return out;
}

MacroMetrics macro_metrics(const MultiClassConfusion& m) {
  const std::uint64_t total = m.total();
  if (total == 0) throw ValidationError("macro_metrics: empty confusion matrix");
  MacroMetrics out;
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < m.num_classes(); ++c) trace += m.at(c, c);
  out.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    const BinaryMetrics b = binary_metrics(m.one_vs_rest(c));
    out.macro_precision += b.precision;
    out.macro_recall += b.recall;
    out.macro_f1 += b.f1;
    out.macro_specificity += b.specificity;
    out.degenerate = out.degenerate || b.degenerate();
  }
  const double k = static_cast<double>(m.num_classes());
  out.macro_precision /= k;
  out.macro_recall /= k;
  out.macro_f1 /= k;
  out.macro_specificity /= k;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ValidationError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - mx);
  for (double& v : out) v /= sum;
  return out;
}

MetricsRow evaluate(const std::function<std::vector<double>(std::size_t)>& logits_for,
                    std::span<const int> truth, std::size_t num_classes, int positive_class,
                    std::string fold_label) {
  if (truth.empty()) throw ValidationError("evaluate: empty dataset");
  if (num_classes < 2) throw ValidationError("evaluate: need at least two classes");
  std::vector<int> predicted(truth.size());
  std::vector<double> scores(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::vector<double> z;
    try {
      z = logits_for(i);
    } catch (const Error& e) {
      throw Error("evaluate: sample " + std::to_string(i) + ": " + e.what());
    }
    if (z.size() != num_classes) {
      throw ShapeError("evaluate: sample " + std::to_string(i) + " produced " +
                       std::to_string(z.size()) + " logits, expected " + std::to_string(num_classes));
    }
    predicted[i] = static_cast<int>(argmax(z));
    if (num_classes == 2) scores[i] = softmax(z)[static_cast<std::size_t>(positive_class)];
  }

  MetricsRow row;
  row.fold = std::move(fold_label);
  if (num_classes == 2) {
    const BinaryMetrics b = binary_metrics(confusion_binary(predicted, truth, positive_class));
    row.accuracy = b.accuracy;
    row.precision = b.precision;
    row.sensitivity = b.recall;
    row.f1 = b.f1;
    row.specificity = b.specificity;
    row.degenerate = b.degenerate();
    const bool has_pos = std::count(truth.begin(), truth.end(), positive_class) > 0;
    const bool has_neg = std::count(truth.begin(), truth.end(), positive_class) <
                         static_cast<std::ptrdiff_t>(truth.size());
    if (has_pos && has_neg) row.auc = roc_auc(scores, truth, positive_class);
    else row.degenerate = true;
  } else {
    const MacroMetrics m = macro_metrics(MultiClassConfusion(num_classes, predicted, truth));
    row.accuracy = m.accuracy;
    row.precision = m.macro_precision;
    row.sensitivity = m.macro_recall;
    row.f1 = m.macro_f1;
    row.specificity = m.macro_specificity;
    row.degenerate = m.degenerate;
  }
  return row;
}

MetricsRow average_rows(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw ValidationError("average_rows: no folds");
  MetricsRow avg;
  avg.fold = "average";
  bool all_auc = true;
  double auc = 0;
  for (const auto& r : rows) {
    avg.accuracy += r.accuracy;
    avg.precision += r.precision;
    avg.sensitivity += r.sensitivity;
    avg.f1 += r.f1;
    avg.specificity += r.specificity;
    avg.degenerate = avg.degenerate || r.degenerate;
    if (r.auc) auc += *r.auc;
    else all_auc = false;
  }
  const double n = static_cast<double>(rows.size());
  avg.accuracy /= n;
  avg.precision /= n;
  avg.sensitivity /= n;
  avg.f1 /= n;
  avg.specificity /= n;
  if (all_auc) avg.auc = auc / n;
  return avg;
}

MetricsReport aggregate_folds(std::vector<MetricsRow> folds) {
  MetricsReport report;
  report.average = average_rows(folds);
  report.folds = std::move(folds);
  return report;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {

constexpr const char* kCsvHeader = "fold,accuracy,precision,sensitivity,f1,specificity,auc\n";

void append_row(std::string& out, const MetricsRow& r) {
  out += r.fold;
  for (double v : {r.accuracy, r.precision, r.sensitivity, r.f1, r.specificity}) {
    out += ',';
    out += format_number(v);
  }
  out += ',';
  if (r.auc) out += format_number(*r.auc);
  out += '\n';
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = kCsvHeader;
  for (const auto& r : report.folds) append_row(out, r);
  append_row(out, report.average);
  return out;
}

std::string metrics_csv(const MetricsRow& row) {
  std::string out = kCsvHeader;
  append_row(out, row);
  return out;
}

}  // namespace vitforge
