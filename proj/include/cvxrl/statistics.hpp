// Boxplot-style distribution summaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace cvxrl {

struct EvalSummary {
  std::size_t n_samples = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  double se = 0.0;   // std / sqrt(n)
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;   // smallest value >= q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest value <= q3 + 1.5 IQR
  double min = 0.0;
  double max = 0.0;
};

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline EvalSummary summarize_distribution(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize_distribution: empty input");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  EvalSummary s;
  s.n_samples = sorted.size();
  const double n = static_cast<double>(sorted.size());

  // Two-pass mean/variance.
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = sorted.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.se = s.std / std::sqrt(n);

  s.q1 = quantile_sorted(sorted, 0.25);
  s.median = quantile_sorted(sorted, 0.5);
  s.q3 = quantile_sorted(sorted, 0.75);
  s.min = sorted.front();
  s.max = sorted.back();

  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_low = *std::lower_bound(sorted.begin(), sorted.end(), lo_fence);
  s.whisker_high = *(std::upper_bound(sorted.begin(), sorted.end(), hi_fence) - 1);
  return s;
}

inline EvalSummary summarize_distribution(const std::vector<double>& values) {
  return summarize_distribution(std::span<const double>(values));
}

}  // namespace cvxrl
