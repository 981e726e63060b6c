#pragma once

namespace ctiq {

/// Standard normal CDF, via erfc (accurate well beyond 1e-7 over the real line).
double normal_cdf(double z);

/// Inverse of normal_cdf by bisection, to 1e-9 in z or better.
/// Throws DomainError unless 0 < p < 1.
double normal_quantile(double p);

}  // namespace ctiq
