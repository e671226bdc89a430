#include "mdfhp/estimate.hpp"

#include "mdfhp/mlf.hpp"
#include "mdfhp/optimize.hpp"
#include "mdfhp/parallel.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>

namespace mdfhp {

InformationCriteria information_criteria(double loglik, int n_params, std::size_t n_events) {
    if (n_events < 1) throw std::invalid_argument("information criteria need at least one event");
    return {-2.0 * loglik + 2.0 * n_params, -2.0 * loglik + n_params * std::log(static_cast<double>(n_events))};
}

double truncated_exp_rate_mle(double sum_excess, std::size_t n, double width, double floor) {
    if (n == 0) throw std::invalid_argument("rate MLE needs at least one observation");
    const double mean = sum_excess / static_cast<double>(n);
    if (mean >= 0.5 * width) return floor;
    if (mean <= 0.0) throw std::invalid_argument("rate MLE is unbounded when every mark sits at the lower bound");
    // Mean of the truncated exponential, decreasing in b from width/2 to 0.
    auto g = [&](double b) {
        const double bw = b * width;
        const double m = bw < 1e-4 ? width * (0.5 - bw / 12.0) : 1.0 / b - width / std::expm1(bw);
        return m - mean;
    };
    double lo = floor;
    double hi = 1.0 / mean;
    if (g(lo) <= 0) return floor;
    boost::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(g, lo, hi, boost::math::tools::eps_tolerance<double>(52), iters);
    return 0.5 * (r.first + r.second);
}

namespace {

double truncated_exp_loglik(double b, double sum_excess, std::size_t n, double width) {
    if (n == 0) return 0.0;
    const double nn = static_cast<double>(n);
    return nn * std::log(b) - b * sum_excess - nn * std::log(-std::expm1(-b * width));
}

}  // namespace

// ---------------------------------------------------------------------------

namespace detail {

LagPairs::LagPairs(const std::vector<double>& targets, const std::vector<double>& sources) {
    std::vector<double> log_dt;
    start.push_back(0);
    for (const double t : targets) {
        const auto count = static_cast<std::size_t>(std::lower_bound(sources.begin(), sources.end(), t) -
                                                    sources.begin());
        for (std::size_t l = 0; l < count; ++l) log_dt.push_back(std::log(t - sources[l]));
        start.push_back(log_dt.size());
    }
    if (log_dt.empty()) return;
    const auto [lo, hi] = std::minmax_element(log_dt.begin(), log_dt.end());
    u0 = *lo - kGridStep;
    nodes = static_cast<std::size_t>((*hi - *lo) / kGridStep) + 4;
    cell.reserve(log_dt.size());
    frac.reserve(log_dt.size());
    for (const double u : log_dt) {
        const double pos = (u - u0) / kGridStep;
        const auto k = std::min(static_cast<std::size_t>(pos), nodes - 3);
        cell.push_back(static_cast<std::uint32_t>(k));
        frac.push_back(static_cast<float>(pos - static_cast<double>(k)));
    }
}

void LagPairs::accumulate(const std::vector<double>& grid, const std::vector<double>& weight, double scale,
                          std::vector<double>& out) const {
    for (std::size_t q = 0; q + 1 < start.size(); ++q) {
        double s = 0.0;
        const std::size_t b = start[q];
        const std::size_t e = start[q + 1];
        for (std::size_t l = b; l < e; ++l) {
            const double x = frac[l];
            const double* v = grid.data() + cell[l] - 1;
            const double xm = x - 1.0, xp = x + 1.0, x2 = x - 2.0;
            const double val =
                (-x * xm * x2 * v[0] + 3.0 * xp * xm * x2 * v[1] - 3.0 * xp * x * x2 * v[2] + xp * x * xm * v[3]) *
                (1.0 / 6.0);
            s += weight[l - b] * val;
        }
        out[q] += scale * s;
    }
}

}  // namespace detail

MdfhpLikelihood::MdfhpLikelihood(const Catalogue& cat, const Membership& membership, const std::vector<double>& cuts)
    : nb_(static_cast<int>(membership.size())),
      m0_(cat.m0),
      cuts_(cuts),
      horizon_(cat.horizon_t),
      intervals_(magnitude_intervals(cat.m0, cuts)) {
    if (membership.size() != cuts.size() + 1) throw std::invalid_argument("membership does not match the cuts");
    const auto n = static_cast<std::size_t>(nb_);
    source_time_.resize(n);
    source_excess_.resize(n);
    target_excess_.resize(n);
    targets_ = membership;
    auto target_time = [&](std::size_t i) {
        std::vector<double> t;
        for (const auto k : membership[i]) t.push_back(cat.events.at(k).t);
        return t;
    };
    for (std::size_t j = 0; j < n; ++j) {
        for (const auto k : membership[j]) {
            const auto& e = cat.events.at(k);
            source_time_[j].push_back(e.t);
            source_excess_[j].push_back(e.magnitude - m0_);
            target_excess_[j].push_back(e.magnitude - intervals_[j].lo);
        }
    }
    pairs_.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) pairs_.emplace_back(target_time(i), source_time_[j]);
}

std::pair<double, double> MdfhpLikelihood::row_terms(const MdfhpParams& p, int i) const {
    const auto n = static_cast<std::size_t>(nb_);
    const auto row = static_cast<std::size_t>(i);
    std::vector<double> lam(targets_[row].size(), p.lambda0(i));
    double comp = p.lambda0(i) * horizon_;
    for (std::size_t j = 0; j < n; ++j) {
        const double a = p.alpha(i, static_cast<Eigen::Index>(j));
        if (a == 0.0) continue;
        const double g = p.gamma(i, static_cast<Eigen::Index>(j));
        const double beta = p.beta(i, static_cast<Eigen::Index>(j));
        const double c = p.c(i, static_cast<Eigen::Index>(j));
        const auto& ex = source_excess_[j];
        const auto& pr = pairs_[row * n + j];
        std::vector<double> w(ex.size());
        for (std::size_t l = 0; l < ex.size(); ++l) w[l] = std::exp(g * ex[l]);
        const double log_c = std::log(c);
        // Direct Mittag-Leffler evaluation: building interpolation tables for
        // every trial beta would cost more than the grid itself.
        std::optional<mlf::MittagLeffler> ml_density, ml_survival;
        if (beta < 1.0) {
            ml_density.emplace(beta, beta);
            ml_survival.emplace(beta, 1.0);
        }
        if (pr.nodes > 0) {
            std::vector<double> grid(pr.nodes);
            for (std::size_t k = 0; k < pr.nodes; ++k) {
                const double u = pr.node(k);
                if (ml_density) {
                    const double lx = beta * (log_c + u);
                    grid[k] = std::exp(lx - u) * (*ml_density)(-std::exp(lx));
                } else {
                    grid[k] = std::exp(log_c - c * std::exp(u));
                }
            }
            pr.accumulate(grid, w, a, lam);
        }
        const auto& st = source_time_[j];
        double cs = 0.0;
        for (std::size_t l = 0; l < st.size(); ++l) {
            const double dt = horizon_ - st[l];
            if (!(dt > 0)) continue;
            const double cdf = ml_survival ? 1.0 - (*ml_survival)(-std::exp(beta * (log_c + std::log(dt))))
                                           : -std::expm1(-c * dt);
            cs += w[l] * cdf;
        }
        comp += a * cs;
    }
    double sum_log = 0.0;
    for (const double v : lam) {
        if (!(v > 0) || !std::isfinite(v)) return {kLoglikSentinel, comp};
        sum_log += std::log(v);
    }
    return {sum_log, comp};
}

double MdfhpLikelihood::mark_loglik(int i, double b) const {
    const auto& ex = target_excess_[static_cast<std::size_t>(i)];
    double sum = 0.0;
    for (const double x : ex) sum += x;
    const auto& iv = intervals_[static_cast<std::size_t>(i)];
    return truncated_exp_loglik(b, sum, ex.size(), iv.hi - iv.lo);
}

double MdfhpLikelihood::mark_rate_mle(int i) const {
    const auto& ex = target_excess_[static_cast<std::size_t>(i)];
    double sum = 0.0;
    for (const double x : ex) sum += x;
    const auto& iv = intervals_[static_cast<std::size_t>(i)];
    return truncated_exp_rate_mle(sum, ex.size(), iv.hi - iv.lo);
}

LoglikParts MdfhpLikelihood::parts(const MdfhpParams& params) const {
    validate(params);
    if (params.nb != nb_ || params.cuts != cuts_ || params.m0 != m0_)
        throw std::invalid_argument("parameters do not match the likelihood's magnitude partition");
    LoglikParts out;
    out.compensators = Eigen::VectorXd::Zero(nb_);
    for (int i = 0; i < nb_; ++i) {
        const auto [sl, comp] = row_terms(params, i);
        out.intensity_term += sl;
        out.compensators(i) = comp;
        out.compensator_term += comp;
        out.mark_term += mark_loglik(i, params.b_mark(i));
    }
    out.total = out.intensity_term + out.mark_term - out.compensator_term;
    if (!std::isfinite(out.total)) out.total = kLoglikSentinel;
    return out;
}

EtasLikelihood::EtasLikelihood(const Catalogue& cat) : m0_(cat.m0), horizon_(cat.horizon_t) {
    for (const auto& e : cat.events) {
        t_.push_back(e.t);
        excess_.push_back(e.magnitude - cat.m0);
    }
    pairs_ = detail::LagPairs(t_, t_);
}

std::pair<double, double> EtasLikelihood::time_terms(const EtasParams& p) const {
    const std::size_t n = t_.size();
    std::vector<double> w(n);
    for (std::size_t l = 0; l < n; ++l) w[l] = p.a_prod * std::exp(p.delta * excess_[l]);
    std::vector<double> lam(n, p.mu);
    if (pairs_.nodes > 0) {
        std::vector<double> grid(pairs_.nodes);
        for (std::size_t k = 0; k < pairs_.nodes; ++k)
            grid[k] = std::exp(-p.p * std::log1p(std::exp(pairs_.node(k)) / p.c_e));
        pairs_.accumulate(grid, w, 1.0, lam);
    }
    double sum_log = 0.0;
    bool ok = true;
    for (const double v : lam) {
        if (!(v > 0) || !std::isfinite(v)) ok = false;
        sum_log += std::log(v);
    }
    double comp = p.mu * horizon_;
    for (std::size_t l = 0; l < n; ++l)
        comp += std::exp(p.delta * excess_[l]) * etas_kernel_integral(p, horizon_ - t_[l]);
    return {ok ? sum_log : kLoglikSentinel, comp};
}

double EtasLikelihood::mark_loglik(double b) const {
    double sum = 0.0;
    for (const double x : excess_) sum += x;
    for (const double x : excess_)
        if (x < 0 || x > kMaxMagnitude - m0_) return kLoglikSentinel;
    return truncated_exp_loglik(b, sum, excess_.size(), kMaxMagnitude - m0_);
}

double EtasLikelihood::mark_rate_mle() const {
    double sum = 0.0;
    for (const double x : excess_) sum += x;
    return truncated_exp_rate_mle(sum, excess_.size(), kMaxMagnitude - m0_);
}

LoglikParts EtasLikelihood::parts(const EtasParams& params) const {
    validate(params);
    if (params.m0 != m0_) throw std::invalid_argument("ETAS m0 does not match the catalogue");
    LoglikParts out;
    const auto [sl, comp] = time_terms(params);
    out.intensity_term = sl;
    out.compensator_term = comp;
    out.compensators = Eigen::VectorXd::Constant(1, comp);
    out.mark_term = mark_loglik(params.b_e);
    out.total = out.intensity_term + out.mark_term - out.compensator_term;
    if (!std::isfinite(out.total)) out.total = kLoglikSentinel;
    return out;
}

LoglikParts loglik_parts_mdfhp(const MdfhpParams& params, const Catalogue& cat, const Membership& membership) {
    // Events outside every subprocess have no mark density.
    std::size_t members = 0;
    for (const auto& m : membership) members += m.size();
    if (members != cat.size()) {
        LoglikParts out;
        out.total = kLoglikSentinel;
        return out;
    }
    return MdfhpLikelihood(cat, membership, params.cuts).parts(params);
}

LoglikParts loglik_parts_etas(const EtasParams& params, const Catalogue& cat) {
    return EtasLikelihood(cat).parts(params);
}

double loglik_mdfhp(const MdfhpParams& params, const Catalogue& cat, const Membership& membership) {
    return loglik_parts_mdfhp(params, cat, membership).total;
}

double loglik_etas(const EtasParams& params, const Catalogue& cat) { return loglik_parts_etas(params, cat).total; }

// ---------------------------------------------------------------------------

ModelType parse_model_type(const std::string& name) {
    if (name == "mdfhp") return ModelType::mdfhp;
    if (name == "etas") return ModelType::etas;
    throw std::invalid_argument("unknown model type '" + name + "' (expected mdfhp or etas)");
}

std::string to_string(ModelType type) { return type == ModelType::mdfhp ? "mdfhp" : "etas"; }

MdfhpParams heuristic_init(const Catalogue& cat, const std::vector<double>& cuts) {
    if (cat.empty()) throw EmptyCatalogueError("cannot initialise from an empty catalogue");
    const auto membership = split_by_magnitude(cat, cuts);
    const MdfhpLikelihood lik(cat, membership, cuts);
    auto p = MdfhpParams::zeros(cat.m0, cuts);
    for (int i = 0; i < p.nb; ++i) {
        p.lambda0(i) = std::max(0.5 * static_cast<double>(lik.count(i)) / cat.horizon_t, 1e-6);
        p.b_mark(i) = lik.count(i) > 0 ? lik.mark_rate_mle(i) : 1.0;
    }
    p.alpha.setConstant(0.2);
    p.gamma.setConstant(1.0);
    p.beta.setConstant(0.7);
    p.c.setConstant(1.0);
    return p;
}

EtasParams heuristic_init_etas(const Catalogue& cat) {
    if (cat.empty()) throw EmptyCatalogueError("cannot initialise from an empty catalogue");
    const EtasLikelihood lik(cat);
    return {0.5 * static_cast<double>(cat.size()) / cat.horizon_t, 1.0, 1.0, 0.03, 1.1, lik.mark_rate_mle(), cat.m0};
}

std::vector<std::string> parameter_names(const ModelParams& params) {
    std::vector<std::string> names;
    if (const auto* p = std::get_if<MdfhpParams>(&params)) {
        const int n = p->nb;
        auto idx = [](int a, int b) { return std::to_string(a + 1) + std::to_string(b + 1); };
        for (int i = 0; i < n; ++i) names.push_back("lambda0_" + idx(i, i));
        for (const char* m : {"alpha", "gamma", "beta", "c"})
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) names.push_back(std::string(m) + "_" + idx(i, j));
        for (int i = 0; i < n; ++i) names.push_back("B_" + idx(i, i));
    } else {
        names = {"mu", "A", "delta", "c_E", "p", "B_E"};
    }
    return names;
}

namespace {

// Row vector layout: log lambda0_i, log alpha_i., log gamma_i., log beta_i., log c_i.
Eigen::VectorXd pack_row(const MdfhpParams& p, int i, double log_lower) {
    const int n = p.nb;
    Eigen::VectorXd x(1 + 4 * n);
    auto lg = [&](double v) { return std::max(std::log(v), log_lower); };
    x(0) = lg(p.lambda0(i));
    for (int j = 0; j < n; ++j) {
        x(1 + j) = lg(p.alpha(i, j));
        x(1 + n + j) = lg(p.gamma(i, j));
        x(1 + 2 * n + j) = lg(p.beta(i, j));
        x(1 + 3 * n + j) = lg(p.c(i, j));
    }
    return x;
}

void unpack_row(const Eigen::VectorXd& x, int i, MdfhpParams& p) {
    const int n = p.nb;
    p.lambda0(i) = std::exp(x(0));
    for (int j = 0; j < n; ++j) {
        p.alpha(i, j) = std::exp(x(1 + j));
        p.gamma(i, j) = std::exp(x(1 + n + j));
        p.beta(i, j) = std::exp(x(1 + 2 * n + j));
        p.c(i, j) = std::exp(x(1 + 3 * n + j));
    }
}

Eigen::VectorXd pack_etas(const EtasParams& p, double log_lower) {
    Eigen::VectorXd x(5);
    x << std::log(p.mu), std::log(p.a_prod), std::log(p.delta), std::log(p.c_e), std::log(p.p);
    return x.cwiseMax(log_lower);
}

void unpack_etas(const Eigen::VectorXd& x, EtasParams& p) {
    p.mu = std::exp(x(0));
    p.a_prod = std::exp(x(1));
    p.delta = std::exp(x(2));
    p.c_e = std::exp(x(3));
    p.p = std::exp(x(4));
}

// Box-constrained objective: points outside the box are projected and charged
// a quadratic penalty, which keeps the simplex away from invalid parameters.
struct Boxed {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::function<double(const Eigen::VectorXd&)> negloglik;

    double operator()(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd y = x.cwiseMax(lower).cwiseMin(upper);
        const double excess = (x - y).squaredNorm();
        const double v = negloglik(y);
        if (!std::isfinite(v)) return 1e300;
        return v + 1e4 * excess;
    }
};

struct Optimum {
    Eigen::VectorXd x;
    double value;
    bool converged;
};

Optimum multistart(const Boxed& f, const Eigen::VectorXd& x0, const FitOptions& opts, std::uint64_t stream,
                   const std::string& label, std::vector<TraceEntry>& trace) {
    const Eigen::Index d = x0.size();
    std::vector<Eigen::VectorXd> starts{x0.cwiseMax(f.lower).cwiseMin(f.upper)};
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(-opts.perturbation, opts.perturbation);
    for (int r = 0; r < opts.restarts; ++r) {
        Eigen::VectorXd x = starts.front();
        for (Eigen::Index k = 0; k < d; ++k) x(k) += u(rng);
        starts.push_back(x.cwiseMax(f.lower).cwiseMin(f.upper));
    }

    std::vector<optimize::Result> runs(starts.size());
    const Eigen::VectorXd step = Eigen::VectorXd::Constant(d, 0.3);
    parallel_for(starts.size(), opts.threads, [&](std::size_t s) {
        runs[s] = optimize::nelder_mead(f, starts[s], step, opts.simplex_tolerance, opts.max_evaluations);
    });

    std::size_t best = 0;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        if (runs[s].value < runs[best].value) best = s;
        trace.push_back({label + " start " + std::to_string(s), runs[s].evaluations,
                         -std::min(runs[best].value, runs[s].value)});
    }
    Optimum out{runs[best].x, runs[best].value, runs[best].converged};
    if (opts.polish) {
        const auto pol = optimize::bfgs(f, out.x, opts.gradient_tolerance, 200, 1e-6);
        if (pol.value < out.value) {
            out.x = pol.x;
            out.value = pol.value;
        }
        out.converged = out.converged || pol.converged;
        trace.push_back({label + " polish", pol.evaluations, -out.value});
    }
    return out;
}

Eigen::VectorXd box_lower(Eigen::Index d, const FitOptions& o) { return Eigen::VectorXd::Constant(d, o.log_lower); }

}  // namespace

FitResult fit(ModelType type, const Catalogue& cat, const std::vector<double>& cuts,
              const std::optional<ModelParams>& init, const FitOptions& opts) {
    validate(cat);
    if (cat.empty()) throw EmptyCatalogueError("cannot fit an empty catalogue");
    FitResult res;
    res.model_type = type;
    res.n_events = cat.size();
    res.catalogue_hash = content_hash(cat);
    res.ci_level = opts.level;

    if (type == ModelType::mdfhp) {
        const auto membership = split_by_magnitude(cat, cuts);
        for (std::size_t j = 0; j < membership.size(); ++j)
            if (membership[j].size() < 2)
                throw std::invalid_argument("subprocess " + std::to_string(j + 1) + " has fewer than 2 events");
        const MdfhpLikelihood lik(cat, membership, cuts);
        MdfhpParams p = heuristic_init(cat, cuts);
        if (init) {
            const auto* given = std::get_if<MdfhpParams>(&*init);
            if (!given) throw std::invalid_argument("initial parameters are not MDFHP parameters");
            if (given->cuts != cuts || given->m0 != cat.m0)
                throw std::invalid_argument("initial parameters use a different magnitude partition");
            p = *given;
        }
        for (int i = 0; i < p.nb; ++i) p.b_mark(i) = lik.mark_rate_mle(i);

        bool converged = true;
        const Eigen::Index d = 1 + 4 * p.nb;
        for (int i = 0; i < p.nb; ++i) {
            Boxed f;
            f.lower = box_lower(d, opts);
            f.upper = Eigen::VectorXd::Constant(d, opts.log_upper);
            f.upper.segment(1 + 2 * p.nb, p.nb).setZero();  // beta <= 1
            f.negloglik = [&lik, &p, i](const Eigen::VectorXd& x) {
                MdfhpParams q = p;
                unpack_row(x, i, q);
                const auto [sl, comp] = lik.row_terms(q, i);
                return -(sl - comp);
            };
            const auto opt = multistart(f, pack_row(p, i, opts.log_lower), opts, static_cast<std::uint64_t>(i),
                                        "row " + std::to_string(i + 1), res.optimizer_trace);
            unpack_row(opt.x.cwiseMax(f.lower).cwiseMin(f.upper), i, p);
            converged = converged && opt.converged;
        }
        res.params = p;
        res.parts = lik.parts(p);
        res.n_params = p.n_params();
        res.converged = converged;
    } else {
        const EtasLikelihood lik(cat);
        EtasParams p = heuristic_init_etas(cat);
        if (init) {
            const auto* given = std::get_if<EtasParams>(&*init);
            if (!given) throw std::invalid_argument("initial parameters are not ETAS parameters");
            p = *given;
            p.m0 = cat.m0;
        }
        p.b_e = lik.mark_rate_mle();
        Boxed f;
        f.lower = box_lower(5, opts);
        f.upper = Eigen::VectorXd::Constant(5, opts.log_upper);
        f.negloglik = [&lik, &p](const Eigen::VectorXd& x) {
            EtasParams q = p;
            unpack_etas(x, q);
            const auto [sl, comp] = lik.time_terms(q);
            return -(sl - comp);
        };
        const auto opt = multistart(f, pack_etas(p, opts.log_lower), opts, 0, "etas", res.optimizer_trace);
        unpack_etas(opt.x.cwiseMax(f.lower).cwiseMin(f.upper), p);
        res.params = p;
        res.parts = lik.parts(p);
        res.n_params = EtasParams::n_params();
        res.converged = opt.converged;
    }
    res.loglik = res.parts.total;
    const auto ic = information_criteria(res.loglik, res.n_params, res.n_events);
    res.aic = ic.aic;
    res.bic = ic.bic;
    res.optimizer_trace.push_back({"final", 0, res.loglik});
    res.ci = confidence_intervals(res, cat, opts.level, opts.hessian_step);
    return res;
}

// ---------------------------------------------------------------------------

std::vector<ParamInterval> log_space_intervals(const std::vector<std::string>& names, const Eigen::VectorXd& x,
                                               const Eigen::MatrixXd& hessian, double level) {
    const auto n = static_cast<std::size_t>(x.size());
    if (names.size() != n || hessian.rows() != x.size() || hessian.cols() != x.size())
        throw std::invalid_argument("interval inputs have inconsistent sizes");
    if (!(level > 0 && level < 1)) throw std::invalid_argument("confidence level must lie in (0, 1)");
    const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);

    std::vector<ParamInterval> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k].name = names[k];
        out[k].estimate = std::exp(x(static_cast<Eigen::Index>(k)));
    }

    // Observed information; drop parameters until the remaining block is
    // positive definite.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < x.size(); ++k)
        if (hessian.row(k).allFinite()) keep.push_back(k);
    for (int round = 0; round < 3 && !keep.empty(); ++round) {
        const auto m = static_cast<Eigen::Index>(keep.size());
        Eigen::MatrixXd info(m, m);
        for (Eigen::Index a = 0; a < m; ++a)
            for (Eigen::Index b = 0; b < m; ++b) info(a, b) = -0.5 * (hessian(keep[a], keep[b]) + hessian(keep[b], keep[a]));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
        const Eigen::VectorXd ev = eig.eigenvalues();
        const double tol = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
        std::vector<bool> affected(static_cast<std::size_t>(m), false);
        bool any = false;
        for (Eigen::Index e = 0; e < m; ++e) {
            if (ev(e) > tol) continue;
            for (Eigen::Index a = 0; a < m; ++a)
                if (std::abs(eig.eigenvectors()(a, e)) > 1e-3) affected[static_cast<std::size_t>(a)] = any = true;
        }
        if (!any) {
            const Eigen::MatrixXd cov = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
            for (Eigen::Index a = 0; a < m; ++a) {
                auto& iv = out[static_cast<std::size_t>(keep[a])];
                iv.se_log = std::sqrt(cov(a, a));
                iv.lo = std::exp(x(keep[a]) - z * iv.se_log);
                iv.hi = std::exp(x(keep[a]) + z * iv.se_log);
                iv.available = true;
            }
            break;
        }
        std::vector<Eigen::Index> next;
        for (Eigen::Index a = 0; a < m; ++a)
            if (!affected[static_cast<std::size_t>(a)]) next.push_back(keep[a]);
        keep = std::move(next);
    }
    return out;
}

std::vector<ParamInterval> confidence_intervals(const FitResult& fit, const Catalogue& cat, double level,
                                                double step) {
    const auto names = parameter_names(fit.params);
    auto guarded = [](auto&& f) {
        return [f](const Eigen::VectorXd& x) {
            try {
                return f(x);
            } catch (const std::exception&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
    };

    if (const auto* pp = std::get_if<MdfhpParams>(&fit.params)) {
        const MdfhpParams& p = *pp;
        const int n = p.nb;
        const auto membership = split_by_magnitude(cat, p.cuts);
        const MdfhpLikelihood lik(cat, membership, p.cuts);
        const auto total = static_cast<Eigen::Index>(names.size());
        Eigen::VectorXd x(total);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(total, total);
        // Position of row-vector component r of row i in the name order.
        auto slot = [n](int i, Eigen::Index r) -> Eigen::Index {
            if (r == 0) return i;
            const Eigen::Index block = (r - 1) / n;
            const Eigen::Index j = (r - 1) % n;
            return n + block * n * n + i * n + j;
        };
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd xr = pack_row(p, i, -std::numeric_limits<double>::infinity());
            auto f = guarded([&lik, &p, i](const Eigen::VectorXd& v) {
                MdfhpParams q = p;
                unpack_row(v, i, q);
                const auto [sl, comp] = lik.row_terms(q, i);
                return sl - comp;
            });
            const Eigen::MatrixXd h = finite_difference_hessian(f, xr, step);
            for (Eigen::Index a = 0; a < xr.size(); ++a) {
                x(slot(i, a)) = xr(a);
                for (Eigen::Index b = 0; b < xr.size(); ++b) hess(slot(i, a), slot(i, b)) = h(a, b);
            }
            const Eigen::Index bk = n + 4 * n * n + i;
            x(bk) = std::log(p.b_mark(i));
            auto fb = guarded([&lik, i](const Eigen::VectorXd& v) { return lik.mark_loglik(i, std::exp(v(0))); });
            hess(bk, bk) = finite_difference_hessian(fb, Eigen::VectorXd::Constant(1, x(bk)), step)(0, 0);
        }
        return log_space_intervals(names, x, hess, level);
    }

    const auto& p = std::get<EtasParams>(fit.params);
    const EtasLikelihood lik(cat);
    Eigen::VectorXd x(6);
    x << std::log(p.mu), std::log(p.a_prod), std::log(p.delta), std::log(p.c_e), std::log(p.p), std::log(p.b_e);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(6, 6);
    auto f = guarded([&lik, &p](const Eigen::VectorXd& v) {
        EtasParams q = p;
        unpack_etas(v, q);
        const auto [sl, comp] = lik.time_terms(q);
        return sl - comp;
    });
    hess.topLeftCorner(5, 5) = finite_difference_hessian(f, x.head(5), step);
    auto fb = guarded([&lik](const Eigen::VectorXd& v) { return lik.mark_loglik(std::exp(v(0))); });
    hess(5, 5) = finite_difference_hessian(fb, x.tail(1), step)(0, 0);
    return log_space_intervals(names, x, hess, level);
}

// ---------------------------------------------------------------------------

nlohmann::json fit_to_json(const FitResult& fit) {
    auto ci = nlohmann::json::array();
    for (const auto& iv : fit.ci) {
        nlohmann::json e = {{"name", iv.name}, {"estimate", iv.estimate}, {"available", iv.available}};
        if (iv.available) {
            e["lo"] = iv.lo;
            e["hi"] = iv.hi;
            e["se_log"] = iv.se_log;
        }
        ci.push_back(e);
    }
    auto trace = nlohmann::json::array();
    for (const auto& t : fit.optimizer_trace)
        trace.push_back({{"stage", t.stage}, {"evaluations", t.evaluations}, {"best_loglik", t.best_loglik}});
    return {{"model", model_to_json(fit.params, fit.catalogue_hash)},
            {"loglik", fit.loglik},
            {"aic", fit.aic},
            {"bic", fit.bic},
            {"n_params", fit.n_params},
            {"n_events", fit.n_events},
            {"I", fit.parts.intensity_term},
            {"J", fit.parts.mark_term},
            {"compensators", std::vector<double>(fit.parts.compensators.data(),
                                                 fit.parts.compensators.data() + fit.parts.compensators.size())},
            {"ci_level", fit.ci_level},
            {"ci", ci},
            {"converged", fit.converged},
            {"optimizer_trace", trace},
            {"catalogue_hash", fit.catalogue_hash}};
}

FitResult fit_from_json(const nlohmann::json& j) {
    FitResult r;
    std::string hash;
    r.params = model_from_json(j.at("model"), &hash);
    r.model_type = std::holds_alternative<MdfhpParams>(r.params) ? ModelType::mdfhp : ModelType::etas;
    r.catalogue_hash = j.value("catalogue_hash", hash);
    r.loglik = j.at("loglik").get<double>();
    r.aic = j.at("aic").get<double>();
    r.bic = j.at("bic").get<double>();
    r.n_params = j.at("n_params").get<int>();
    r.n_events = j.at("n_events").get<std::size_t>();
    r.parts.intensity_term = j.value("I", 0.0);
    r.parts.mark_term = j.value("J", 0.0);
    const auto comps = j.value("compensators", std::vector<double>{});
    r.parts.compensators = Eigen::Map<const Eigen::VectorXd>(comps.data(), static_cast<Eigen::Index>(comps.size()));
    r.parts.compensator_term = r.parts.compensators.sum();
    r.parts.total = r.loglik;
    r.ci_level = j.value("ci_level", 0.90);
    r.converged = j.value("converged", false);
    for (const auto& e : j.value("ci", nlohmann::json::array())) {
        ParamInterval iv;
        iv.name = e.at("name").get<std::string>();
        iv.estimate = e.at("estimate").get<double>();
        iv.available = e.value("available", false);
        if (iv.available) {
            iv.lo = e.at("lo").get<double>();
            iv.hi = e.at("hi").get<double>();
            iv.se_log = e.value("se_log", 0.0);
        }
        r.ci.push_back(iv);
    }
    for (const auto& e : j.value("optimizer_trace", nlohmann::json::array()))
        r.optimizer_trace.push_back(
            {e.at("stage").get<std::string>(), e.at("evaluations").get<int>(), e.at("best_loglik").get<double>()});
    return r;
}

}  // namespace mdfhp
