#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdfhp/catalog.hpp"
#include "mdfhp/estimate.hpp"
#include "mdfhp/model.hpp"

namespace mdfhp {

// Transformed times per stream: one stream per MDFHP subprocess, or a single
// stream for ETAS.
struct ResidualSeries {
    std::vector<std::vector<double>> taus;          // tau_k = Lambda_j(t_k), increasing
    std::vector<std::vector<double>> u;             // U_k = 1 - exp(-(tau_k - tau_{k-1})), tau_0 = 0
    std::vector<std::vector<std::size_t>> indices;  // catalogue index of each event
    std::vector<double> horizon_compensator;        // Lambda_j(T)

    std::size_t streams() const { return taus.size(); }
};

class InsufficientDataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DegenerateDataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

ResidualSeries transformed_times(const ModelParams& params, const Catalogue& cat);
ResidualSeries transformed_times(const FitResult& fit, const Catalogue& cat);

// Transformed inter-event times from increasing transformed times.
std::vector<double> uniform_spacings(std::span<const double> taus);

struct PathPoint {
    std::size_t k;  // cumulative event number, from 1
    double value;   // tau_k - k
};

std::vector<PathPoint> mean_removed_path(const ResidualSeries& series, std::size_t stream);

// Asymptotic Kolmogorov quantiles used for the residual-path bands.
inline constexpr double kBand95 = 1.3581;
inline constexpr double kBand99 = 1.6276;

// Half-width b * sqrt(n) of the band around the mean-removed path.
double band_half_width(double b, std::size_t n);

// P[K > x] for the limiting Kolmogorov distribution.
double kolmogorov_survival(double x);

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

enum class KsAlternative {
    two_sided,
    // D+ = max(i/n - u_(i)): small u's over-represented (events arriving
    // sooner than the model expects).
    greater,
    // D- = max(u_(i) - (i-1)/n).
    less,
};

// One-sample KS test against Uniform[0, 1] with asymptotic p-values
// (exp(-2 n D^2) for the one-sided variants). Needs n >= 5.
TestResult ks_uniform_test(std::span<const double> u, KsAlternative alt = KsAlternative::two_sided);

// Two-sample KS test with the asymptotic p-value at effective size nm/(n+m).
TestResult ks_two_sample_test(std::span<const double> a, std::span<const double> b);

// Pearson correlation of (U_k, U_{k+1}); statistic t = r sqrt(m-2)/sqrt(1-r^2)
// over the m = n-1 pairs, two-sided p from Student t with m-2 df. Needs n >= 10.
TestResult pearson_serial_test(std::span<const double> u);

// Pearson t-test between two equally long count series.
TestResult pearson_test(std::span<const double> x, std::span<const double> y);

struct StreamDiagnostics {
    std::size_t n = 0;
    double horizon_compensator = 0.0;
    TestResult ks;
    TestResult pearson;
    double max_abs_path = 0.0;
    double min_path = 0.0;
    bool inside_95 = true;
    bool inside_99 = true;
    bool below_99 = false;  // path crosses the lower 99% band
};

// Per-stream KS and Pearson tests plus band checks.
std::vector<StreamDiagnostics> diagnose(const ResidualSeries& series, KsAlternative alt = KsAlternative::two_sided);

// Cross-stream independence check: events of every subprocess are binned by
// unit intervals of the pooled transformed time sum_j Lambda_j(t); the result
// holds the Pearson test of the bin counts for each pair (a, b), a < b.
struct CrossStreamTest {
    std::size_t a;
    std::size_t b;
    TestResult test;
};
std::vector<CrossStreamTest> cross_stream_independence(const MdfhpParams& params, const Catalogue& cat);

// Residual CSV: stream,k,tau,path,u (stream 1-based).
void write_residual_csv(std::ostream& out, const ResidualSeries& series);
// One SVG panel per stream: mean-removed path, zero line, dashed 95% and
// dotted 99% bands.
void write_residual_svg(std::ostream& out, const ResidualSeries& series, const std::vector<std::string>& titles);

nlohmann::json diagnostics_to_json(const std::vector<StreamDiagnostics>& diags);

}  // namespace mdfhp
