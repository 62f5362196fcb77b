#include "clusterkit/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace clusterkit {

namespace {

// Lentz's algorithm for the continued fraction of I_x(a,b).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // Use the symmetry that keeps the continued fraction rapidly convergent.
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double t_cdf(double x, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("t_cdf: dof must be positive");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  const double t2 = x * x;
  const double ib = incomplete_beta(0.5 * dof, 0.5, dof / (dof + t2));
  return x >= 0.0 ? 1.0 - 0.5 * ib : 0.5 * ib;
}

double t_quantile(double p, double dof) {
  if (dof <= 0.0)
    throw std::invalid_argument("t_quantile: dof must be positive");
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p == 0.5) return 0.0;
  // Exploit symmetry, then bisect an upper-tail bracket and polish with
  // Newton steps off the t density.
  if (p < 0.5) return -t_quantile(1.0 - p, dof);

  // Bisection against the cdf down to ulp spacing. Newton polishing is
  // deliberately avoided: cancellation in cdf(x) - p makes it unstable in
  // the tails, while bisection inherits the cdf's own monotonicity.
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, dof) < p) {
    hi *= 2.0;
    if (hi > 1e300) return std::numeric_limits<double>::infinity();
  }
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (t_cdf(mid, dof) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / 1.4142135623730950488016887242097);
}

}  // namespace clusterkit
