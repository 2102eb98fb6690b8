// Error metrics and trial aggregation.

#ifndef LABELSHIFT_METRICS_HPP
#define LABELSHIFT_METRICS_HPP

#include "labelshift/types.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace labelshift {

/// Per-class mean squared error (1/m) sum_c (est_c - truth_c)^2.
inline double ratio_mse(const Vector& est, const Vector& truth) {
  if (est.size() != truth.size() || est.size() == 0)
    throw Error(ErrorCode::kDimensionMismatch, "ratio_mse needs equal, nonzero lengths");
  return (est - truth).squaredNorm() / static_cast<double>(est.size());
}

/// OLS slope of log(mse) against log(n).
inline double loglog_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw Error(ErrorCode::kInvalidArgument, "loglog_slope needs at least 3 points");
  double sx = 0.0, sy = 0.0;
  for (auto [n, v] : points) {
    if (!(n > 0.0) || !(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, "loglog_slope needs positive values");
    sx += std::log(n);
    sy += std::log(v);
  }
  const double k = static_cast<double>(points.size());
  const double mx = sx / k, my = sy / k;
  double sxy = 0.0, sxx = 0.0;
  for (auto [n, v] : points) {
    double dx = std::log(n) - mx;
    sxy += dx * (std::log(v) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw Error(ErrorCode::kInvalidArgument, "loglog_slope needs distinct sample sizes");
  return sxy / sxx;
}

struct TrialSummary {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation; 0 for a single value
  std::size_t count = 0;
};

inline TrialSummary summarize(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "summarize needs at least one value");
  TrialSummary s;
  s.values.assign(values.begin(), values.end());
  s.count = values.size();
  // Summing in sorted order makes the result independent of input order.
  std::vector<double> sorted = s.values;
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  for (double v : sorted) acc += v;
  s.mean = acc / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace labelshift

#endif  // LABELSHIFT_METRICS_HPP
