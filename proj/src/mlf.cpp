#include "mdfhp/mlf.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mdfhp::mlf {
namespace {

using cplx = std::complex<double>;

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogMachineEps = -36.043653389117154;  // log(DBL_EPSILON)
const double kTargetLogEps = std::log(1e-15);
constexpr int kMaxSeriesTerms = 200000;
constexpr int kMaxAsymptoticTerms = 160;
constexpr double kAsymptoticTol = 1e-14;

// sin(pi y) with exact zeros at integers.
double sin_pi(double y) {
    double r = std::remainder(y, 2.0);  // [-1, 1]
    if (r > 0.5) r = 1.0 - r;
    else if (r < -0.5) r = -1.0 - r;
    return std::sin(kPi * r);
}

bool is_nonpositive_integer(double y) { return y <= 0.0 && y == std::floor(y); }

// 1 / Gamma(y) for any real y.
double rgamma(double y) {
    if (is_nonpositive_integer(y)) return 0.0;
    if (y > 0.5) return y < 170.0 ? 1.0 / std::tgamma(y) : std::exp(-std::lgamma(y));
    const double one_minus = 1.0 - y;
    const double g = one_minus < 170.0 ? std::tgamma(one_minus) : std::exp(std::lgamma(one_minus));
    return sin_pi(y) * g / kPi;
}

void check_finite(double value) {
    if (!std::isfinite(value)) throw std::overflow_error("Mittag-Leffler value is not representable");
}

struct ContourParams {
    double mu = 0.0;
    double h = 0.0;
    double n = kInf;
};

// Optimal parabolic contour in a region bounded by two singularities.
ContourParams optimal_param_rb(double t, double phi_j, double phi_j1, double pj, double qj,
                               double log_epsilon) {
    constexpr double fac = 1.01;
    const double f_max = std::exp(log_epsilon - kLogMachineEps);
    const double sq_phi_j = std::sqrt(phi_j);
    const double threshold = 2.0 * std::sqrt((log_epsilon - kLogMachineEps) / t);
    const double sq_phi_j1 = std::min(std::sqrt(phi_j1), threshold - sq_phi_j);

    double sq_bar_j = 0.0;
    double sq_bar_j1 = 0.0;
    double f_bar = 1.0;
    bool admissible = false;

    if (pj < 1e-14 && qj < 1e-14) {
        sq_bar_j = sq_phi_j;
        sq_bar_j1 = sq_phi_j1;
        admissible = true;
    } else if (pj < 1e-14) {
        sq_bar_j = sq_phi_j;
        const double f_min = sq_phi_j > 0.0 ? fac * std::pow(sq_phi_j / (sq_phi_j1 - sq_phi_j), qj) : fac;
        if (f_min < f_max) {
            f_bar = f_min + f_min / f_max * (f_max - f_min);
            const double fq = std::pow(f_bar, -1.0 / qj);
            sq_bar_j1 = (2.0 * sq_phi_j1 - fq * sq_phi_j) / (2.0 + fq);
            admissible = true;
        }
    } else if (qj < 1e-14) {
        sq_bar_j1 = sq_phi_j1;
        const double f_min = fac * std::pow(sq_phi_j1 / (sq_phi_j1 - sq_phi_j), pj);
        if (f_min < f_max) {
            f_bar = f_min + f_min / f_max * (f_max - f_min);
            const double fp = std::pow(f_bar, -1.0 / pj);
            sq_bar_j = (2.0 * sq_phi_j + fp * sq_phi_j1) / (2.0 - fp);
            admissible = true;
        }
    } else {
        double f_min = fac * (sq_phi_j + sq_phi_j1) / std::pow(sq_phi_j1 - sq_phi_j, std::max(pj, qj));
        if (f_min < f_max) {
            f_min = std::max(f_min, 1.5);
            f_bar = f_min + f_min / f_max * (f_max - f_min);
            const double fp = std::pow(f_bar, -1.0 / pj);
            const double fq = std::pow(f_bar, -1.0 / qj);
            const double w = -phi_j1 * t / log_epsilon;
            const double den = 2.0 + w - (1.0 + w) * fp + fq;
            sq_bar_j = ((2.0 + w + fq) * sq_phi_j + fp * sq_phi_j1) / den;
            sq_bar_j1 = (-(1.0 + w) * fq * sq_phi_j + (2.0 + w - (1.0 + w) * fp) * sq_phi_j1) / den;
            admissible = true;
        }
    }
    if (!admissible) return {};

    log_epsilon -= std::log(f_bar);
    const double w = -sq_bar_j1 * sq_bar_j1 * t / log_epsilon;
    ContourParams out;
    const double mid = (1.0 + w) * sq_bar_j + sq_bar_j1;
    out.mu = std::pow(mid / (2.0 + w), 2);
    out.h = -2.0 * kPi / log_epsilon * (sq_bar_j1 - sq_bar_j) / mid;
    out.n = std::ceil(std::sqrt(1.0 - log_epsilon / t / out.mu) / out.h);
    return out;
}

// Optimal parabolic contour in the unbounded region right of all singularities.
ContourParams optimal_param_ru(double t, double phi_j, double pj, double log_epsilon) {
    const double sq_phi_j = std::sqrt(phi_j);
    double phibar = phi_j > 0.0 ? phi_j * 1.01 : 0.01;
    double sq_phibar = std::sqrt(phibar);

    constexpr double f_min = 1.0;
    constexpr double f_max = 10.0;
    constexpr double f_tar = 5.0;

    double n = 0.0;
    double big_a = 0.0;
    double sq_mu = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        const double phi_t = phibar * t;
        const double log_eps_phi_t = log_epsilon / phi_t;
        n = std::ceil(phi_t / kPi * (1.0 - 1.5 * log_eps_phi_t + std::sqrt(1.0 - 2.0 * log_eps_phi_t)));
        big_a = kPi * n / phi_t;
        sq_mu = sq_phibar * std::abs(4.0 - big_a) / std::abs(7.0 - std::sqrt(1.0 + 12.0 * big_a));
        const double fbar = std::pow((sq_phibar - sq_phi_j) / sq_mu, -pj);
        if (pj < 1e-14 || (f_min < fbar && fbar < f_max)) break;
        sq_phibar = std::pow(f_tar, -1.0 / pj) * sq_mu + sq_phi_j;
        phibar = sq_phibar * sq_phibar;
    }
    ContourParams out;
    out.mu = sq_mu * sq_mu;
    out.h = (-3.0 * big_a - 2.0 + 2.0 * std::sqrt(1.0 + 12.0 * big_a)) / (4.0 - big_a) / n;
    out.n = n;

    // Keep round-off under control.
    const double threshold = (log_epsilon - kLogMachineEps) / t;
    if (out.mu > threshold) {
        const double q = std::abs(pj) < 1e-14 ? 0.0 : std::pow(f_tar, -1.0 / pj) * std::sqrt(out.mu);
        phibar = std::pow(q + std::sqrt(phi_j), 2);
        if (phibar < threshold) {
            const double w = std::sqrt(kLogMachineEps / (kLogMachineEps - log_epsilon));
            const double u = std::sqrt(-phibar * t / kLogMachineEps);
            out.mu = threshold;
            out.n = std::ceil(w * log_epsilon / 2.0 / kPi / (u * w - 1.0));
            out.h = w / out.n;
        } else {
            out.n = kInf;
            out.h = 0.0;
        }
    }
    return out;
}

// Nodes s_k = mu (1 + i h k)^2 and s'_k for k = 0..n.
struct ParabolaNode {
    cplx s;
    cplx ds;
};

std::vector<ParabolaNode> parabola_nodes(const ContourParams& p) {
    const int n = static_cast<int>(p.n);
    std::vector<ParabolaNode> nodes;
    nodes.reserve(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        const double u = p.h * k;
        const cplx one_iu(1.0, u);
        nodes.push_back({p.mu * one_iu * one_iu, cplx(-2.0 * p.mu * u, 2.0 * p.mu)});
    }
    return nodes;
}

// Contour parameters on z <= 0 (only singularity: branch point at the origin).
ContourParams negative_axis_params(double a, double b) {
    const double p0 = std::max(0.0, -2.0 * (a - b + 1.0));
    double log_epsilon = kTargetLogEps;
    for (;;) {
        ContourParams p = optimal_param_ru(1.0, 0.0, p0, log_epsilon);
        if (p.n <= 200.0) return p;
        log_epsilon += std::log(10.0);
    }
}

// (h / pi) [Im S_0 / 2 + sum_{k>=1} Im S_k] for real z, using S_{-k} = -conj(S_k).
template <class Term>
double symmetric_contour_sum(std::size_t count, double h, Term term) {
    double acc = 0.5 * term(0).imag();
    for (std::size_t k = 1; k < count; ++k) acc += term(k).imag();
    return h / kPi * acc;
}

}  // namespace

void validate(MlParams p) {
    if (!(p.a > 0.0 && p.a <= 1.0) || !(p.b > 0.0 && p.b <= 1.0)) {
        throw std::domain_error("Mittag-Leffler parameters must lie in (0, 1], got a=" + std::to_string(p.a) +
                                " b=" + std::to_string(p.b));
    }
}

namespace detail {

double series(double a, double b, double z, bool* converged) {
    double sum = 0.0;
    double zn = 1.0;
    double prev = 0.0;
    bool done = false;
    for (int n = 0; n < kMaxSeriesTerms; ++n) {
        const double arg = n * a + b;
        if (arg > 170.0) {
            done = true;
            break;
        }
        const double term = zn / std::tgamma(arg);
        sum += term;
        if (n > 0 && arg > 1.5 && prev != 0.0) {
            const double r = std::abs(term / prev);
            if (r < 1.0 && std::abs(term) * r / (1.0 - r) <= 1e-17 * std::abs(sum)) {
                done = true;
                break;
            }
        }
        if (term == 0.0 && arg > 1.5) {
            done = true;
            break;
        }
        prev = term;
        zn *= z;
    }
    if (converged) *converged = done;
    return sum;
}

bool asymptotic(double a, double b, double z, double rel_tol, double* value) {
    if (!(z < 0.0)) return false;
    const double log_x = std::log(-z);
    double sum = 0.0;
    double min_env = kInf;
    double prev_env = kInf;
    for (int k = 1; k <= kMaxAsymptoticTerms; ++k) {
        const double y = b - a * k;
        const double log_env = std::lgamma(1.0 - y) - std::log(kPi) - k * log_x;
        if (log_env > prev_env) break;  // optimal truncation
        prev_env = log_env;
        const double env = std::exp(log_env);
        min_env = std::min(min_env, env);
        if (env <= 1e-17 * std::abs(sum)) break;
        // -z^{-k} / Gamma(b - a k) with z = -x
        const double sign = (k % 2 == 1) ? 1.0 : -1.0;
        sum += sign * std::exp(-k * log_x) * rgamma(y);
    }
    if (!(min_env <= rel_tol * std::abs(sum))) return false;
    *value = sum;
    return true;
}

double contour(double a, double b, double z) {
    validate({a, b});
    const double t = 1.0;
    const double abs_z = std::abs(z);
    const double theta = z < 0.0 ? kPi : 0.0;

    // Poles of s^{a-b} / (s^a - z) on the principal sheet.
    struct Singularity {
        cplx s;
        double phi;
    };
    std::vector<Singularity> sing;
    if (abs_z > 0.0) {
        const int kmin = static_cast<int>(std::ceil(-a / 2.0 - theta / (2.0 * kPi)));
        const int kmax = static_cast<int>(std::floor(a / 2.0 - theta / (2.0 * kPi)));
        for (int k = kmin; k <= kmax; ++k) {
            const cplx s = std::pow(abs_z, 1.0 / a) * std::exp(cplx(0.0, (theta + 2.0 * k * kPi) / a));
            const double phi = (s.real() + std::abs(s)) / 2.0;
            if (phi > 1e-15) sing.push_back({s, phi});
        }
        std::sort(sing.begin(), sing.end(), [](const auto& l, const auto& r) { return l.phi < r.phi; });
    }
    sing.insert(sing.begin(), Singularity{cplx(0.0, 0.0), 0.0});
    const std::size_t j1 = sing.size();

    std::vector<double> p(j1, 1.0);
    std::vector<double> q(j1, 1.0);
    std::vector<double> phi(j1 + 1, kInf);
    p[0] = std::max(0.0, -2.0 * (a - b + 1.0));
    q[j1 - 1] = kInf;
    for (std::size_t j = 0; j < j1; ++j) phi[j] = sing[j].phi;

    double log_epsilon = kTargetLogEps;
    std::vector<std::size_t> regions;
    for (std::size_t j = 0; j < j1; ++j) {
        if (phi[j] < (log_epsilon - kLogMachineEps) / t && phi[j] < phi[j + 1]) regions.push_back(j);
    }
    if (regions.empty()) throw std::overflow_error("no admissible contour for Mittag-Leffler evaluation");

    ContourParams best;
    std::size_t best_region = regions.front();
    for (;;) {
        best = ContourParams{};
        for (std::size_t r : regions) {
            const ContourParams cp = r + 1 < j1 ? optimal_param_rb(t, phi[r], phi[r + 1], p[r], q[r], log_epsilon)
                                                : optimal_param_ru(t, phi[r], p[r], log_epsilon);
            if (cp.n < best.n) {
                best = cp;
                best_region = r;
            }
        }
        if (best.n <= 200.0) break;
        log_epsilon += std::log(10.0);
    }

    const auto nodes = parabola_nodes(best);
    const double integral = symmetric_contour_sum(nodes.size(), best.h, [&](std::size_t k) {
        const cplx s = nodes[k].s;
        return std::exp(s * t) * std::pow(s, a - b) / (std::pow(s, a) - z) * nodes[k].ds;
    });

    // Residues of poles to the right of the contour: (1/a) s^{1-b} e^{s t}.
    double residues = 0.0;
    for (std::size_t j = best_region + 1; j < j1; ++j) {
        const cplx s = sing[j].s;
        const cplx log_res = -std::log(a) + (1.0 - b) * std::log(s) + s * t;
        if (log_res.real() > 709.0) throw std::overflow_error("Mittag-Leffler value is not representable");
        residues += std::exp(log_res).real();
    }
    return integral + residues;
}

}  // namespace detail

Method method_for(double a, double b, double z) {
    validate({a, b});
    if (z == 0.0 || (a == 1.0 && b == 1.0)) return Method::closed_form;
    if (std::abs(z) <= kSeriesRadius) return Method::series;
    double unused = 0.0;
    if (z <= -kAsymptoticRadius && detail::asymptotic(a, b, z, kAsymptoticTol, &unused)) return Method::asymptotic;
    return Method::contour;
}

double ml2(double a, double b, double z) {
    validate({a, b});
    if (!std::isfinite(z)) throw std::domain_error("Mittag-Leffler argument must be finite");
    double value = 0.0;
    switch (method_for(a, b, z)) {
        case Method::closed_form:
            value = z == 0.0 ? rgamma(b) : std::exp(z);
            break;
        case Method::series: {
            bool converged = false;
            value = detail::series(a, b, z, &converged);
            if (!converged) value = detail::contour(a, b, z);
            break;
        }
        case Method::asymptotic:
            detail::asymptotic(a, b, z, kAsymptoticTol, &value);
            break;
        case Method::contour:
            value = detail::contour(a, b, z);
            break;
    }
    check_finite(value);
    return value;
}

double ml1(double a, double z) { return ml2(a, 1.0, z); }

namespace {

void validate_kernel(double beta, double c) {
    if (!(beta > 0.0 && beta <= 1.0)) throw std::domain_error("kernel shape beta must lie in (0, 1]");
    if (!(c > 0.0) || !std::isfinite(c)) throw std::domain_error("kernel rate c must be positive");
}

// 1 - E_beta(-x) = -sum_{n>=1} (-x)^n / Gamma(n beta + 1), for 0 <= x <= 1.
double complementary_series(double beta, double x) {
    double sum = 0.0;
    double xn = -1.0;
    double prev = 0.0;
    for (int n = 1; n < kMaxSeriesTerms; ++n) {
        xn *= -x;
        const double arg = n * beta + 1.0;
        if (arg > 170.0) break;
        const double term = xn / std::tgamma(arg);
        sum += term;
        if (prev != 0.0) {
            const double r = std::abs(term / prev);
            if (r < 1.0 && std::abs(term) * r / (1.0 - r) <= 1e-17 * std::abs(sum)) break;
        }
        if (term == 0.0) break;
        prev = term;
    }
    return sum;
}

}  // namespace

double ml_density(double beta, double c, double t) {
    validate_kernel(beta, c);
    if (!(t > 0.0)) throw std::domain_error("kernel density requires t > 0");
    if (beta == 1.0) return c * std::exp(-c * t);
    const double ct = c * t;
    const double x = std::pow(ct, beta);
    return c * std::pow(ct, beta - 1.0) * ml2(beta, beta, -x);
}

double ml_cdf(double beta, double c, double t) {
    validate_kernel(beta, c);
    if (!(t >= 0.0)) throw std::domain_error("kernel distribution requires t >= 0");
    if (t == 0.0) return 0.0;
    if (beta == 1.0) return -std::expm1(-c * t);
    const double x = std::pow(c * t, beta);
    if (x <= 1.0) return complementary_series(beta, x);
    return 1.0 - ml2(beta, 1.0, -x);
}

double ml_survival(double beta, double c, double t) {
    validate_kernel(beta, c);
    if (!(t >= 0.0)) throw std::domain_error("kernel distribution requires t >= 0");
    if (t == 0.0) return 1.0;
    if (beta == 1.0) return std::exp(-c * t);
    return ml2(beta, 1.0, -std::pow(c * t, beta));
}

// ---------------------------------------------------------------------------
// MittagLeffler

MittagLeffler::MittagLeffler(double a, double b) : a_(a), b_(b) {
    validate({a, b});

    double prev = 0.0;
    for (int n = 0; n < kMaxSeriesTerms; ++n) {
        const double arg = n * a + b;
        if (arg > 170.0) break;
        const double coef = 1.0 / std::tgamma(arg);
        series_coef_.push_back(coef);
        if (n > 0 && arg > 1.5) {
            const double r = coef / prev;
            if (r < 1.0 && coef * r / (1.0 - r) <= 1e-18) break;
        }
        prev = coef;
    }

    asym_coef_.assign(kMaxAsymptoticTerms + 1, 0.0);
    asym_log_envelope_.assign(kMaxAsymptoticTerms + 1, 0.0);
    for (int k = 1; k <= kMaxAsymptoticTerms; ++k) {
        const double y = b - a * k;
        asym_coef_[k] = ((k % 2 == 1) ? 1.0 : -1.0) * rgamma(y);
        asym_log_envelope_[k] = std::lgamma(1.0 - y) - std::log(kPi);
    }

    const ContourParams cp = negative_axis_params(a, b);
    node_step_ = cp.h;
    for (const auto& node : parabola_nodes(cp)) {
        node_weight_.push_back(std::exp(node.s) * std::pow(node.s, a - b) * node.ds);
        node_power_.push_back(std::pow(node.s, a));
    }
}

double MittagLeffler::series(double z) const {
    double sum = 0.0;
    double zn = 1.0;
    for (double coef : series_coef_) {
        const double term = zn * coef;
        sum += term;
        zn *= z;
        if (zn == 0.0) break;
    }
    return sum;
}

bool MittagLeffler::asymptotic(double x, double* value) const {
    const double log_x = std::log(x);
    const double inv_x = 1.0 / x;
    double xk = 1.0;
    double sum = 0.0;
    double min_env = kInf;
    double prev_env = kInf;
    for (int k = 1; k <= kMaxAsymptoticTerms; ++k) {
        xk *= inv_x;
        const double log_env = asym_log_envelope_[k] - k * log_x;
        if (log_env > prev_env) break;
        prev_env = log_env;
        const double env = std::exp(log_env);
        min_env = std::min(min_env, env);
        if (env <= 1e-17 * std::abs(sum)) break;
        sum += asym_coef_[k] * xk;
    }
    if (!(min_env <= kAsymptoticTol * std::abs(sum))) return false;
    *value = sum;
    return true;
}

double MittagLeffler::contour(double z) const {
    return symmetric_contour_sum(node_weight_.size(), node_step_,
                                 [&](std::size_t k) { return node_weight_[k] / (node_power_[k] - z); });
}

double MittagLeffler::operator()(double z) const {
    if (!(z <= 0.0)) throw std::domain_error("MittagLeffler evaluator requires z <= 0");
    if (z == 0.0) return series_coef_.front();
    if (a_ == 1.0 && b_ == 1.0) return std::exp(z);
    const double x = -z;
    const bool series_complete = series_coef_.size() < static_cast<std::size_t>(kMaxSeriesTerms);
    if (x <= kSeriesRadius && series_complete) return series(z);
    double value = 0.0;
    if (x >= kAsymptoticRadius && asymptotic(x, &value)) return value;
    return contour(z);
}

// ---------------------------------------------------------------------------
// LogMlTable

namespace {

constexpr double kTableSmallX = 1e-3;
constexpr int kTableSmallTerms = 10;
constexpr int kTableDegree = 14;
constexpr double kTableTailTol = 5e-14;

}  // namespace

LogMlTable::LogMlTable(double a, double b) : a_(a), b_(b), degree_(kTableDegree) {
    validate({a, b});
    if (!(a < 1.0)) throw std::domain_error("LogMlTable requires a < 1");
    if (b < a) throw std::domain_error("LogMlTable requires b >= a (positive function)");

    const MittagLeffler ml(a, b);

    w_lo_ = std::log(kTableSmallX);
    for (int n = 0; n < kTableSmallTerms; ++n) small_.push_back(((n % 2 == 0) ? 1.0 : -1.0) * rgamma(n * a + b));

    // Smallest x at which a fixed-length asymptotic polynomial in 1/x is accurate.
    double x_hi = 16.0;
    for (;;) {
        double value = 0.0;
        if (detail::asymptotic(a, b, -x_hi, 1e-16, &value)) break;
        x_hi *= 1.25;
        if (x_hi > 1e7) throw std::runtime_error("asymptotic regime for Mittag-Leffler table not reached");
    }
    {
        const double log_x = std::log(x_hi);
        double sum = 0.0;
        double prev_env = kInf;
        large_.push_back(0.0);
        for (int k = 1; k <= kMaxAsymptoticTerms; ++k) {
            const double y = b - a * k;
            const double log_env = std::lgamma(1.0 - y) - std::log(kPi) - k * log_x;
            if (log_env > prev_env) break;
            prev_env = log_env;
            if (std::exp(log_env) <= 1e-17 * std::abs(sum)) break;
            const double coef = ((k % 2 == 1) ? 1.0 : -1.0) * rgamma(y);
            large_.push_back(coef);
            sum += coef * std::exp(-k * log_x);
        }
    }
    w_hi_ = std::log(x_hi);

    // Chebyshev panels; halve the width until the trailing coefficients reach
    // the evaluation noise floor.
    const int m = degree_ + 1;
    std::vector<double> cos_table(static_cast<std::size_t>(m) * m);
    for (int k = 0; k < m; ++k)
        for (int j = 0; j < m; ++j) cos_table[k * m + j] = std::cos(kPi * k * (j + 0.5) / m);
    std::vector<double> values(static_cast<std::size_t>(m));
    double previous_tail = kInf;
    std::vector<double> previous_cheb;
    double previous_width = 0.0;
    for (double width = 0.5;; width *= 0.5) {
        const int panels = static_cast<int>(std::ceil((w_hi_ - w_lo_) / width));
        const double pw = (w_hi_ - w_lo_) / panels;
        std::vector<double> cheb(static_cast<std::size_t>(panels) * m, 0.0);
        double worst_tail = 0.0;
        for (int p = 0; p < panels; ++p) {
            const double left = w_lo_ + p * pw;
            for (int j = 0; j < m; ++j) {
                const double w = left + 0.5 * (cos_table[m + j] + 1.0) * pw;
                values[j] = std::log(ml(-std::exp(w)));
            }
            double* coef = &cheb[static_cast<std::size_t>(p) * m];
            for (int k = 0; k < m; ++k) {
                double acc = 0.0;
                for (int j = 0; j < m; ++j) acc += values[j] * cos_table[k * m + j];
                coef[k] = 2.0 * acc / m;
            }
            coef[0] *= 0.5;
            worst_tail = std::max(worst_tail, std::abs(coef[m - 1]) + std::abs(coef[m - 2]));
        }
        if (worst_tail > 0.5 * previous_tail) {
            // No further gain: the previous panelling was already at the noise floor.
            cheb_ = std::move(previous_cheb);
            panel_width_ = previous_width;
            break;
        }
        cheb_ = cheb;
        panel_width_ = pw;
        if (worst_tail <= kTableTailTol || width < 1.0 / 64.0) break;
        previous_tail = worst_tail;
        previous_cheb = std::move(cheb);
        previous_width = pw;
    }
    inv_panel_width_ = 1.0 / panel_width_;
}

double LogMlTable::operator()(double log_x) const {
    if (log_x < w_lo_) {
        const double x = std::exp(log_x);
        // log(s0 + x r) = log s0 + log1p(x r / s0) keeps the deficit from 1 exact.
        double rest = 0.0;
        for (auto it = small_.rbegin(); it != small_.rend() - 1; ++it) rest = rest * x + *it;
        return std::log(small_[0]) + std::log1p(x * rest / small_[0]);
    }
    if (log_x > w_hi_) {
        const double y = std::exp(-log_x);
        double acc = 0.0;
        for (std::size_t k = large_.size() - 1; k >= 1; --k) acc = (acc + large_[k]) * y;
        return std::log(acc);
    }
    const int m = degree_ + 1;
    const int panels = static_cast<int>(cheb_.size()) / m;
    int p = static_cast<int>((log_x - w_lo_) * inv_panel_width_);
    p = std::clamp(p, 0, panels - 1);
    const double left = w_lo_ + p * panel_width_;
    const double u = 2.0 * (log_x - left) * inv_panel_width_ - 1.0;
    const double* coef = &cheb_[static_cast<std::size_t>(p) * m];
    double b1 = 0.0;
    double b2 = 0.0;
    for (int k = m - 1; k >= 1; --k) {
        const double b0 = coef[k] + 2.0 * u * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    return coef[0] + u * b1 - b2;
}

std::shared_ptr<const LogMlTable> cached_table(double a, double b) {
    struct Entry {
        double a;
        double b;
        std::shared_ptr<const LogMlTable> table;
    };
    constexpr std::size_t kCapacity = 32;
    thread_local std::vector<Entry> cache;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        if (cache[i].a == a && cache[i].b == b) {
            auto hit = cache[i];
            cache.erase(cache.begin() + static_cast<std::ptrdiff_t>(i));
            cache.push_back(hit);
            return hit.table;
        }
    }
    auto table = std::make_shared<const LogMlTable>(a, b);
    if (cache.size() >= kCapacity) cache.erase(cache.begin());
    cache.push_back({a, b, table});
    return table;
}

}  // namespace mdfhp::mlf
