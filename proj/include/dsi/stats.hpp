#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "dsi/core.hpp"

namespace dsi::stats {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Linear interpolation between order statistics with plotting position
/// (i - 1) / (n - 1): p = 0 gives the minimum, p = 1 the maximum.
inline double interpolated_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw SchemaError("quantile of an empty sample");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = std::clamp(p, 0.0, 1.0) * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  const double v = sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
  return std::clamp(v, sorted.front(), sorted.back());
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw SchemaError("KS statistic needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// One-sample KS statistic of a sample against a continuous CDF.
template <class Cdf>
double ks_one_sample(std::vector<double> sample, Cdf&& cdf) {
  if (sample.empty()) throw SchemaError("KS statistic needs a non-empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Fraction of squared singular-value mass in the first k values.
inline double retained_energy(const Vector& singular_values, Index k) {
  const double total = singular_values.squaredNorm();
  return total > 0.0 ? singular_values.head(k).squaredNorm() / total : 0.0;
}

/// Smallest k with retained_energy(s, k) >= energy, capped at the number of
/// numerically non-zero singular values.
inline Index energy_rank(const Vector& singular_values, double energy) {
  if (!(energy > 0.0 && energy <= 1.0)) throw ConfigError("energy fraction must lie in (0, 1]");
  if (singular_values.size() == 0 || !(singular_values[0] > 0.0))
    throw NumericalError("no positive singular values");
  const double tol = singular_values[0] * static_cast<double>(singular_values.size()) *
                     std::numeric_limits<double>::epsilon();
  Index rank = 0;
  while (rank < singular_values.size() && singular_values[rank] > tol) ++rank;
  for (Index k = 1; k < rank; ++k)
    if (retained_energy(singular_values, k) >= energy) return k;
  return rank;
}

/// Numerical rank with the usual max(m, n) * eps * s_max threshold.
inline Index numerical_rank(const Vector& singular_values, Index rows, Index cols) {
  if (singular_values.size() == 0) return 0;
  const double tol = singular_values[0] * static_cast<double>(std::max(rows, cols)) *
                     std::numeric_limits<double>::epsilon();
  Index r = 0;
  while (r < singular_values.size() && singular_values[r] > tol) ++r;
  return r;
}

}  // namespace dsi::stats
