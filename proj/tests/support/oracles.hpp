#pragma once

// Independent metric oracles: exact rationals and O(n²) pair counting.

#include <cstdint>
#include <numeric>
#include <span>

namespace vitforge::testing {

/// Exact non-negative rational with 64-bit parts, kept reduced.
struct Fraction {
  std::uint64_t num = 0, den = 1;

  static Fraction of(std::uint64_t n, std::uint64_t d) {
    const std::uint64_t g = std::gcd(n, d);
    return g == 0 ? Fraction{0, 1} : Fraction{n / g, d / g};
  }
  Fraction operator*(const Fraction& o) const { return of(num * o.num, den * o.den); }
  Fraction operator+(const Fraction& o) const { return of(num * o.den + o.num * den, den * o.den); }
  Fraction operator/(const Fraction& o) const { return of(num * o.den, den * o.num); }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct Oracle {
  double accuracy, precision, recall, specificity, f1;
};

inline Oracle rational_metrics(std::span<const int> pred, std::span<const int> truth, int positive) {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
  }
  Oracle o{};
  o.accuracy = Fraction::of(tp + tn, pred.size()).value();
  const auto precision = tp + fp ? Fraction::of(tp, tp + fp) : Fraction{};
  const auto recall = tp + fn ? Fraction::of(tp, tp + fn) : Fraction{};
  o.precision = precision.value();
  o.recall = recall.value();
  o.specificity = tn + fp ? Fraction::of(tn, tn + fp).value() : 0.0;
  o.f1 = precision.num && recall.num
             ? (Fraction{2, 1} * precision * recall / (precision + recall)).value()
             : 0.0;
  return o;
}

inline double pairwise_auc(std::span<const double> scores, std::span<const int> truth, int positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (truth[i] != positive) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (truth[j] == positive) continue;
      pairs += 1;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

}  // namespace vitforge::testing
