#include "dsem/normal.hpp"

#include <cmath>
#include <limits>

namespace dsem::normal {
namespace {

constexpr double kSqrt2 = 1.41421356237309504880;
constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Phi(x) / phi(x) for x << 0 via the asymptotic series.
double mills_ratio_lower_tail(double x) {
  const double x2 = x * x;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -(2.0 * k - 1.0) / x2;
    sum += term;
  }
  return -sum / x;
}

}  // namespace

double pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double log_cdf(double x) {
  if (x == -kInfinity) return -kInfinity;
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x / kSqrt2));
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / kSqrt2));
  return log_pdf(x) + std::log(mills_ratio_lower_tail(x));
}

double inverse_mills(double x) {
  if (x > -30.0) return pdf(x) / cdf(x);
  return 1.0 / mills_ratio_lower_tail(x);
}

// Acklam's rational approximation followed by one Halley refinement step.
double quantile(double p) {
  if (p <= 0.0) return -kInfinity;
  if (p >= 1.0) return kInfinity;
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Refine against the tail that carries the precision.
  double e, u;
  if (x <= 0.0) {
    e = cdf(x) - p;
    u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
  } else {
    e = (1.0 - p) - cdf(-x);
    u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
  }
  return x - u / (1.0 + 0.5 * x * u);
}

double log_interval_mass(double a, double b) {
  if (a >= b) return -kInfinity;
  if (a > 0.0) return log_interval_mass(-b, -a);
  const double lb = log_cdf(b);
  const double la = log_cdf(a);
  if (la == -kInfinity) return lb;
  return lb + std::log1p(-std::exp(la - lb));
}

}  // namespace dsem::normal
