#pragma once

namespace dsem::normal {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kPi = 3.14159265358979323846;

double pdf(double x);
double log_pdf(double x);
double cdf(double x);
/// log Phi(x), accurate far into the lower tail.
double log_cdf(double x);
/// d/dx log Phi(x) = phi(x) / Phi(x).
double inverse_mills(double x);
/// Phi^{-1}(p) for p in (0, 1).
double quantile(double p);
/// log(Phi(b) - Phi(a)) for a < b, computed on the side of the smaller tail.
double log_interval_mass(double a, double b);

}  // namespace dsem::normal
