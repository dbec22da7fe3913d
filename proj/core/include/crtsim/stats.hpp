#pragma once

#include <cmath>
#include <span>

namespace crtsim {

inline constexpr double kPi = 3.14159265358979323846;
/// Variance of the standard logistic distribution, pi^2 / 3.
inline constexpr double kLogisticVariance = kPi * kPi / 3.0;

inline double expit(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

/// Standard normal CDF.
double normal_cdf(double z) noexcept;

/// Standard normal quantile; |error| below 1e-14 on (0, 1).
/// Returns -inf / +inf at 0 / 1 and NaN outside [0, 1].
double normal_quantile(double p) noexcept;

double mean(std::span<const double> x) noexcept;

/// Sample variance with n-1 denominator; 0 when fewer than two values.
double sample_variance(std::span<const double> x) noexcept;

inline double sample_sd(std::span<const double> x) noexcept {
  return std::sqrt(sample_variance(x));
}

/// Quantile by linear interpolation between order statistics (Hyndman-Fan
/// type 7). `x` need not be sorted. Empty input yields NaN.
double quantile(std::span<const double> x, double prob);

}  // namespace crtsim
