#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mdfhp/catalog.hpp"
#include "mdfhp/model.hpp"

namespace mdfhp {

// loglik = intensity_term + mark_term - compensator_term.
struct LoglikParts {
    double intensity_term = 0.0;    // I: sum of log ground intensities at events
    double mark_term = 0.0;         // J: sum of log mark densities
    double compensator_term = 0.0;  // sum over subprocesses of Lambda_j(T)
    double total = 0.0;
    Eigen::VectorXd compensators;   // Lambda_j(T) per subprocess
};

inline constexpr double kLoglikSentinel = -std::numeric_limits<double>::infinity();

// Log-likelihood pieces; total is kLoglikSentinel when an event has zero
// intensity or falls outside its subprocess's mark support.
LoglikParts loglik_parts_mdfhp(const MdfhpParams& params, const Catalogue& cat, const Membership& membership);
LoglikParts loglik_parts_etas(const EtasParams& params, const Catalogue& cat);

double loglik_mdfhp(const MdfhpParams& params, const Catalogue& cat, const Membership& membership);
double loglik_etas(const EtasParams& params, const Catalogue& cat);

struct InformationCriteria {
    double aic;
    double bic;
};

InformationCriteria information_criteria(double loglik, int n_params, std::size_t n_events);

// Closed-form-root MLE of the rate of a truncated exponential on [lo, hi)
// given the sample sum of (m - lo). Returns `floor` when the sample mean is at
// or beyond the uniform limit (hi - lo) / 2.
double truncated_exp_rate_mle(double sum_excess, std::size_t n, double width, double floor = 1e-8);

// ---------------------------------------------------------------------------
// Likelihood engines with the catalogue geometry precomputed. Each MDFHP row
// (one target subprocess) is an independent term of the log-likelihood, so
// rows can be evaluated and optimised separately.

namespace detail {

// All (target, earlier source) lag pairs of two event streams. Kernel values at
// the lags come from 4-point Lagrange interpolation on a uniform grid in
// log(dt); each pair stores its grid cell and position within it, so an
// evaluation only refills the grid.
struct LagPairs {
    static constexpr double kGridStep = 0.01;

    double u0 = 0.0;                  // log(dt) at grid node 0
    std::size_t nodes = 0;
    std::vector<std::uint32_t> cell;  // node k with log(dt) in [u_k, u_k+1), k >= 1
    std::vector<float> frac;          // (log(dt) - u_k) / step
    std::vector<std::size_t> start;   // offset of each target's block (targets + 1 entries)

    // Sources are time ordered; each target pairs with the sources strictly before it.
    LagPairs(const std::vector<double>& targets, const std::vector<double>& sources);
    LagPairs() = default;

    double node(std::size_t k) const { return u0 + kGridStep * static_cast<double>(k); }

    // out[q] += scale * sum over target q's pairs of weight[source] * kernel(lag),
    // with grid[k] the kernel at node(k). Pair l of a target block belongs to source l.
    void accumulate(const std::vector<double>& grid, const std::vector<double>& weight, double scale,
                    std::vector<double>& out) const;
};

}  // namespace detail

class MdfhpLikelihood {
public:
    // membership must be the split of cat by cuts.
    MdfhpLikelihood(const Catalogue& cat, const Membership& membership, const std::vector<double>& cuts);

    int nb() const { return nb_; }
    double horizon() const { return horizon_; }
    std::size_t count(int i) const { return targets_[i].size(); }

    // Row i terms for the supplied kernel parameters (only row i is read).
    // Returns {sum log lambda_i(t_k), Lambda_i(T)}; the first is -inf when an
    // intensity is not positive.
    std::pair<double, double> row_terms(const MdfhpParams& params, int i) const;

    // Mark log-likelihood of subprocess i at rate b.
    double mark_loglik(int i, double b) const;
    // Profile MLE of B_ii.
    double mark_rate_mle(int i) const;

    LoglikParts parts(const MdfhpParams& params) const;
    double operator()(const MdfhpParams& params) const { return parts(params).total; }

private:
    int nb_;
    double m0_;
    std::vector<double> cuts_;
    double horizon_;
    std::vector<std::vector<double>> source_time_;    // per subprocess j
    std::vector<std::vector<double>> source_excess_;  // M - m0 per subprocess j
    std::vector<std::vector<double>> target_excess_;  // M - lo_i per subprocess i
    std::vector<std::vector<std::size_t>> targets_;
    std::vector<detail::LagPairs> pairs_;  // index i * nb + j
    std::vector<MagnitudeInterval> intervals_;
};

class EtasLikelihood {
public:
    explicit EtasLikelihood(const Catalogue& cat);

    double horizon() const { return horizon_; }
    std::size_t count() const { return t_.size(); }

    // {sum log lambda(t_k), Lambda(T)}
    std::pair<double, double> time_terms(const EtasParams& params) const;
    double mark_loglik(double b) const;
    double mark_rate_mle() const;

    LoglikParts parts(const EtasParams& params) const;
    double operator()(const EtasParams& params) const { return parts(params).total; }

private:
    double m0_;
    double horizon_;
    std::vector<double> t_;
    std::vector<double> excess_;
    detail::LagPairs pairs_;
};

// ---------------------------------------------------------------------------
// Fitting

enum class ModelType { mdfhp, etas };

ModelType parse_model_type(const std::string& name);
std::string to_string(ModelType type);

struct FitOptions {
    int restarts = 10;              // perturbed starts in addition to the initial point
    double perturbation = 0.5;      // half-width of the log-uniform perturbation
    std::uint64_t seed = 1;
    int max_evaluations = 6000;     // per simplex run
    double simplex_tolerance = 1e-5;
    double gradient_tolerance = 1e-3;
    bool polish = true;             // quasi-Newton polish of the best simplex result
    int threads = 1;
    double hessian_step = 1e-4;
    double level = 0.90;
    double log_lower = -23.0;       // box on log-parameters
    double log_upper = 8.0;
};

struct ParamInterval {
    std::string name;
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double se_log = 0.0;  // standard error of log(theta)
    bool available = false;
};

struct TraceEntry {
    std::string stage;  // e.g. "row 1 start 3", "polish"
    int evaluations = 0;
    double best_loglik = 0.0;
};

struct FitResult {
    ModelType model_type = ModelType::mdfhp;
    ModelParams params;
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    int n_params = 0;
    std::size_t n_events = 0;
    LoglikParts parts;
    std::vector<ParamInterval> ci;
    double ci_level = 0.90;
    bool converged = false;
    std::vector<TraceEntry> optimizer_trace;
    std::string catalogue_hash;
};

// Heuristic starting points.
MdfhpParams heuristic_init(const Catalogue& cat, const std::vector<double>& cuts);
EtasParams heuristic_init_etas(const Catalogue& cat);

// Maximum likelihood fit. `init` (if given) must match the model type.
// Throws std::invalid_argument when a subprocess has fewer than 2 events.
FitResult fit(ModelType type, const Catalogue& cat, const std::vector<double>& cuts,
              const std::optional<ModelParams>& init = std::nullopt, const FitOptions& opts = {});

// Log-space Wald intervals exp(log theta +- z SE) from a central-difference
// Hessian of the log-likelihood in log parameters. Parameters whose Hessian
// block is singular or indefinite are reported unavailable.
std::vector<ParamInterval> confidence_intervals(const FitResult& fit, const Catalogue& cat, double level,
                                                double step = 1e-4);

// Generic form used above: intervals for parameters theta = exp(x) given the
// Hessian of the log-likelihood with respect to x.
std::vector<ParamInterval> log_space_intervals(const std::vector<std::string>& names, const Eigen::VectorXd& x,
                                               const Eigen::MatrixXd& hessian, double level);

// Central-difference Hessian of f at x with step h.
template <class F>
Eigen::MatrixXd finite_difference_hessian(F&& f, const Eigen::VectorXd& x, double h) {
    const Eigen::Index n = x.size();
    Eigen::MatrixXd hess(n, n);
    const double f0 = f(x);
    for (Eigen::Index a = 0; a < n; ++a) {
        Eigen::VectorXd xp = x, xm = x;
        xp(a) += h;
        xm(a) -= h;
        hess(a, a) = (f(xp) - 2.0 * f0 + f(xm)) / (h * h);
        for (Eigen::Index b = 0; b < a; ++b) {
            Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
            pp(a) += h, pp(b) += h;
            pm(a) += h, pm(b) -= h;
            mp(a) -= h, mp(b) += h;
            mm(a) -= h, mm(b) -= h;
            hess(a, b) = hess(b, a) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
        }
    }
    return hess;
}

// Parameter names in the order used by confidence intervals, with 1-based
// subprocess indices (1 = highest magnitude interval).
std::vector<std::string> parameter_names(const ModelParams& params);

nlohmann::json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);

}  // namespace mdfhp
