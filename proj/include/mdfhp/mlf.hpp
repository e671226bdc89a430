#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <vector>

// Real-argument Mittag-Leffler functions E_{a,b}(z) for 0 < a, b <= 1 and the
// time-scaled Mittag-Leffler density / distribution used as a Hawkes kernel.
//
// Evaluation switches between three methods:
//   |z| <= 1            power series
//   z <= -15            Poincare asymptotic expansion, optimally truncated,
//                       used only when its error envelope is negligible
//   otherwise           inverse Laplace transform on an optimal parabolic
//                       contour (Garrappa 2015), plus pole residues for z > 0
namespace mdfhp::mlf {

struct MlParams {
    double a;
    double b;
};

// Throws std::domain_error unless 0 < a <= 1 and 0 < b <= 1.
void validate(MlParams p);

enum class Method { closed_form, series, asymptotic, contour };

inline constexpr double kSeriesRadius = 1.0;
inline constexpr double kAsymptoticRadius = 15.0;

// Method ml2() would use for this argument (exposed for crossover tests).
Method method_for(double a, double b, double z);

// E_{a,b}(z). Throws std::domain_error for parameters outside (0,1] or
// non-finite z, std::overflow_error when the value is not representable.
double ml2(double a, double b, double z);

// E_a(z) = E_{a,1}(z).
double ml1(double a, double z);

// c f_beta(c t) = c^beta t^(beta-1) E_{beta,beta}(-(c t)^beta), t > 0.
double ml_density(double beta, double c, double t);

// F(t) = 1 - E_beta(-(c t)^beta), t >= 0. Small arguments use the
// complementary series so F keeps full relative precision near 0.
double ml_cdf(double beta, double c, double t);

// 1 - F(t) = E_beta(-(c t)^beta).
double ml_survival(double beta, double c, double t);

// Forced-method entry points (tests and crossover checks only).
namespace detail {
double series(double a, double b, double z, bool* converged = nullptr);
// Returns false when the envelope of the optimally truncated expansion is not
// below rel_tol * |value|.
bool asymptotic(double a, double b, double z, double rel_tol, double* value);
double contour(double a, double b, double z);
}  // namespace detail

// E_{a,b}(z) for fixed (a, b) on z <= 0 with precomputed series coefficients,
// asymptotic coefficients and contour nodes. On the negative axis the contour
// has no poles, so its nodes do not depend on z.
class MittagLeffler {
public:
    MittagLeffler(double a, double b);

    double a() const { return a_; }
    double b() const { return b_; }

    // z must be <= 0.
    double operator()(double z) const;

private:
    double series(double z) const;
    bool asymptotic(double x, double* value) const;
    double contour(double z) const;

    double a_;
    double b_;
    std::vector<double> series_coef_;        // 1 / Gamma(n a + b)
    std::vector<double> asym_coef_;          // (-1)^(k+1) / Gamma(b - a k), k >= 1
    std::vector<double> asym_log_envelope_;  // log(Gamma(1 - b + a k) / pi)
    std::vector<std::complex<double>> node_weight_;
    std::vector<std::complex<double>> node_power_;
    double node_step_ = 0.0;
};

// log E_{a,b}(-x) tabulated in w = log x by piecewise Chebyshev expansions,
// with the series below the table and the asymptotic expansion above it.
// Requires 0 < a < 1. Relative accuracy is about 1e-13.
class LogMlTable {
public:
    LogMlTable(double a, double b);

    double a() const { return a_; }
    double b() const { return b_; }

    // log E_{a,b}(-x) where log_x = log(x).
    double operator()(double log_x) const;

    double lower_log_x() const { return w_lo_; }
    double upper_log_x() const { return w_hi_; }

private:
    double a_;
    double b_;
    double w_lo_;
    double w_hi_;
    double panel_width_;
    double inv_panel_width_;
    int degree_;
    std::vector<double> cheb_;    // panels x (degree_ + 1)
    std::vector<double> small_;   // (-1)^n / Gamma(n a + b)
    std::vector<double> large_;   // asymptotic coefficients in 1/x
};

// Shared, immutable table for (a, b); recently used tables are cached per
// thread so repeated likelihood evaluations at the same shape skip the build.
std::shared_ptr<const LogMlTable> cached_table(double a, double b);

}  // namespace mdfhp::mlf
