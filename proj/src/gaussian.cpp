#include "ctiq/gaussian.hpp"

#include <cmath>
#include <string>

#include "ctiq/error.hpp"

namespace ctiq {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1), got " + std::to_string(p));
  // Φ(±38.5) already rounds to 0 and 1 in double precision.
  double lo = -38.5, hi = 38.5;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace ctiq
