#pragma once

// Arbitrary-precision reference values for the Mittag-Leffler tests.
namespace oracle {

// E_{a,b}(z) evaluated with MPFR. Uses the power series with enough guard bits
// to absorb cancellation, and the optimally truncated asymptotic expansion when
// the series would need more than ~150 leading terms of growth. Returns +inf
// when the value overflows a double. *near_overflow is set when the value lies
// within a few units of the overflow threshold in log space.
double ml(double a, double b, double z, bool* near_overflow = nullptr);

// e^{x^2} erfc(x) = E_{1/2}(-x), x >= 0.
double erfc_scaled(double x);

// 1/sqrt(pi) + z e^{z^2} erfc(-z) = E_{1/2,1/2}(z).
double ml_half_half(double z);

}  // namespace oracle
