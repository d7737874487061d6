#pragma once

// Independent reference computations used only by the test suites. None of
// these call into the library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

/// Closed-form solution of x' = alpha x - x^3 (Bernoulli equation).
inline double bernoulli_cubic(double alpha, double x0, double t) {
  if (x0 == 0.0) return 0.0;
  double x2;
  if (alpha == 0.0) {
    x2 = x0 * x0 / (1.0 + 2.0 * x0 * x0 * t);
  } else {
    const double e = std::exp(2.0 * alpha * t);
    x2 = alpha * x0 * x0 * e / (alpha + x0 * x0 * (e - 1.0));
  }
  return std::copysign(std::sqrt(x2), x0);
}

/// E[x^2] for density ~ exp(-x^4 / (2 sigma^2)):
/// int_0^inf x^k exp(-x^4/c) dx = c^{(k+1)/4} Gamma((k+1)/4) / 4 with c = 2 sigma^2.
inline double quartic_second_moment(double sigma) {
  const double c = 2.0 * sigma * sigma;
  return std::sqrt(c) * std::tgamma(0.75) / std::tgamma(0.25);
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct WordExtremes {
  double max_rate;
  double min_rate;
};

/// Enumerates every word of length T over the multiplier alphabet and returns
/// the extreme growth rates (1/T) ln |product|.
inline WordExtremes enumerate_words(const std::vector<double>& multipliers, int T) {
  const auto k = static_cast<std::uint64_t>(multipliers.size());
  std::uint64_t total = 1;
  for (int i = 0; i < T; ++i) total *= k;
  WordExtremes out{-std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity()};
  for (std::uint64_t w = 0; w < total; ++w) {
    std::uint64_t code = w;
    double log_prod = 0.0;
    for (int i = 0; i < T; ++i) {
      log_prod += std::log(std::abs(multipliers[code % k]));
      code /= k;
    }
    out.max_rate = std::max(out.max_rate, log_prod / T);
    out.min_rate = std::min(out.min_rate, log_prod / T);
  }
  return out;
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double F = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

/// Asymptotic KS critical coefficient at level 0.01.
inline constexpr double kKsCoefficient01 = 1.628;

inline double normal_cdf(double x, double variance) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0 * variance));
}

inline double sample_variance(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / (v.size() - 1);
}

}  // namespace oracle
