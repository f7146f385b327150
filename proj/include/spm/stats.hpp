#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace spm {

/// Sample mean with its standard error.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error of i.i.d. samples; summation runs in index order.
inline Estimate estimate_mean(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n == 0) return {};
  double sum = 0.0;
  for (double s : samples) sum += s;
  const double mean = sum / static_cast<double>(n);
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double var = ss / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Ratio of means mean(a)/mean(b) with a delta-method standard error.
/// Returns {0, 0} when both means vanish.
inline Estimate estimate_ratio(std::span<const double> a, std::span<const double> b) {
  const Estimate ea = estimate_mean(a);
  const Estimate eb = estimate_mean(b);
  if (eb.mean == 0.0) {
    if (ea.mean == 0.0) return {};
    return {INFINITY, INFINITY};
  }
  const double r = ea.mean / eb.mean;
  const std::size_t n = a.size();
  if (n < 2) return {r, 0.0};
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - r * b[i];
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  return {r, std::sqrt(var / static_cast<double>(n)) / std::abs(eb.mean)};
}

}  // namespace spm
