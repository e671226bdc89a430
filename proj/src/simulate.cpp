#include "mdfhp/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>

namespace mdfhp {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t window, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),   static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(window), static_cast<std::uint32_t>(window >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

double sample_mark(const MdfhpParams& params, int i, double u) {
    const auto iv = params.intervals().at(static_cast<std::size_t>(i));
    const double m = truncated_exp_quantile(params.b_mark(i), iv.lo, iv.hi, u);
    if (!iv.closed_above && m >= iv.hi) return std::nextafter(iv.hi, iv.lo);
    return m;
}

double sample_mark_etas(const EtasParams& params, double u) {
    return truncated_exp_quantile(params.b_e, params.m0, kMaxMagnitude, u);
}

namespace {

double uniform(std::mt19937_64& rng) { return std::generate_canonical<double, 64>(rng); }

// Exponential waiting time with the given rate, from a draw in [0, 1).
double exponential(std::mt19937_64& rng, double rate) { return -std::log1p(-uniform(rng)) / rate; }

// Chebyshev interpolants in t on [t_a, t_b] of the excitation from events at
// least one window length before t_a. Their kernels are analytic on a Bernstein
// ellipse with parameter 3 + sqrt(8) around the window, so degree 24 is
// accurate to rounding.
class DistantHistory {
public:
    static constexpr int kNodes = 25;

    template <class F>
    DistantHistory(int rows, double t_a, double t_b, F&& excitation)
        : rows_(rows), mid_(0.5 * (t_a + t_b)), half_(0.5 * (t_b - t_a)), coef_(static_cast<std::size_t>(rows) * kNodes) {
        std::vector<double> values(static_cast<std::size_t>(rows) * kNodes);
        for (int k = 0; k < kNodes; ++k) {
            const double x = std::cos(std::numbers::pi * (k + 0.5) / kNodes);
            for (int r = 0; r < rows; ++r) values[static_cast<std::size_t>(r * kNodes + k)] = excitation(r, mid_ + half_ * x);
        }
        for (int r = 0; r < rows; ++r)
            for (int n = 0; n < kNodes; ++n) {
                double acc = 0.0;
                for (int k = 0; k < kNodes; ++k)
                    acc += values[static_cast<std::size_t>(r * kNodes + k)] *
                           std::cos(std::numbers::pi * n * (k + 0.5) / kNodes);
                coef_[static_cast<std::size_t>(r * kNodes + n)] = (n == 0 ? 1.0 : 2.0) * acc / kNodes;
            }
    }

    double operator()(int row, double t) const {
        const double x = std::clamp((t - mid_) / half_, -1.0, 1.0);
        const double* c = &coef_[static_cast<std::size_t>(row * kNodes)];
        double b1 = 0.0, b2 = 0.0;
        for (int n = kNodes - 1; n >= 1; --n) {
            const double b0 = 2.0 * x * b1 - b2 + c[n];
            b2 = b1;
            b1 = b0;
        }
        return x * b1 - b2 + c[0];
    }

private:
    int rows_;
    double mid_;
    double half_;
    std::vector<double> coef_;
};

// Index of the first history event within one window length of t_a.
template <class E>
std::size_t recent_start(std::span<const E> history, double t_a, double t_b) {
    const double cutoff = t_a - (t_b - t_a);
    return static_cast<std::size_t>(
        std::upper_bound(history.begin(), history.end(), cutoff, [](double v, const E& e) { return v < e.t; }) -
        history.begin());
}

void check_bound(double lam, double bound, double t) {
    if (lam > bound * (1.0 + 1e-9))
        throw ThinningBoundError("intensity " + std::to_string(lam) + " exceeds the thinning bound " +
                                 std::to_string(bound) + " at t=" + std::to_string(t));
}

}  // namespace

struct MdfhpWindowSimulator::Impl {
    std::shared_ptr<const MdfhpEvaluator> eval;
    double t_a;
    double t_b;
    double last_history;
    std::vector<LabelledEvent> recent;
    std::optional<DistantHistory> background;
};

MdfhpWindowSimulator::MdfhpWindowSimulator(std::shared_ptr<const MdfhpEvaluator> eval,
                                           std::span<const LabelledEvent> history, double t_a, double t_b)
    : impl_(std::make_unique<Impl>()) {
    if (!(t_b > t_a)) throw std::invalid_argument("simulation window is empty");
    if (!history.empty() && history.back().t >= t_a)
        throw std::invalid_argument("history must end before the simulation window");
    const std::size_t split = recent_start(history, t_a, t_b);
    const auto distant = history.first(split);
    impl_->eval = std::move(eval);
    impl_->t_a = t_a;
    impl_->t_b = t_b;
    impl_->last_history = history.empty() ? -INFINITY : history.back().t;
    impl_->recent.assign(history.begin() + static_cast<std::ptrdiff_t>(split), history.end());
    if (split > 0) {
        const MdfhpEvaluator& ev = *impl_->eval;
        impl_->background.emplace(ev.params().nb, t_a, t_b, [&](int i, double t) {
            double sum = 0.0;
            for (const auto& e : distant) sum += ev.excitation(i, e, t);
            return sum;
        });
    }
}

MdfhpWindowSimulator::MdfhpWindowSimulator(const MdfhpParams& params, std::span<const LabelledEvent> history,
                                           double t_a, double t_b)
    : MdfhpWindowSimulator(std::make_shared<const MdfhpEvaluator>(params), history, t_a, t_b) {}

MdfhpWindowSimulator::~MdfhpWindowSimulator() = default;
MdfhpWindowSimulator::MdfhpWindowSimulator(MdfhpWindowSimulator&&) noexcept = default;

std::vector<LabelledEvent> MdfhpWindowSimulator::run(std::mt19937_64& rng, const SimulationOptions& opts) const {
    if (!(opts.epsilon > 0)) throw std::invalid_argument("the thinning offset must be positive");
    const Impl& w = *impl_;
    const MdfhpEvaluator& eval = *w.eval;
    const MdfhpParams& params = eval.params();
    std::vector<LabelledEvent> out;

    auto intensities = [&](double t) {
        IntensityVector lam(params.nb);
        for (int i = 0; i < params.nb; ++i) {
            double sum = params.lambda0(i) + (w.background ? (*w.background)(i, t) : 0.0);
            for (const auto& e : w.recent) sum += eval.excitation(i, e, t);
            for (const auto& e : out) sum += eval.excitation(i, e, t);
            lam(i) = sum;
        }
        return lam;
    };

    double t = w.t_a;
    while (true) {
        const double last = !out.empty() ? out.back().t : w.last_history;
        const double s = std::max(t, last + opts.epsilon);
        if (s >= w.t_b) break;
        const double bound = intensities(s).sum();
        const double cand = s + exponential(rng, bound);
        if (cand >= w.t_b) break;
        const IntensityVector lam = intensities(cand);
        const double total = lam.sum();
        check_bound(total, bound, cand);
        t = cand;
        if (uniform(rng) * bound > total) continue;
        double pick = uniform(rng) * total;
        int i = 0;
        while (i + 1 < params.nb && pick >= lam(i)) pick -= lam(i++);
        out.push_back({cand, sample_mark(params, i, uniform(rng)), i});
        if (out.size() > opts.cap)
            throw RunawayError("simulation exceeded the cap of " + std::to_string(opts.cap) + " events");
        if (opts.on_event && opts.on_event(out.back())) break;
    }
    return out;
}

std::vector<LabelledEvent> simulate_mdfhp(const MdfhpParams& params, std::span<const LabelledEvent> history,
                                          double t_a, double t_b, std::mt19937_64& rng,
                                          const SimulationOptions& opts) {
    return MdfhpWindowSimulator(params, history, t_a, t_b).run(rng, opts);
}

struct EtasWindowSimulator::Impl {
    EtasParams params;
    double t_a;
    double t_b;
    std::vector<Event> recent;
    std::optional<DistantHistory> background;

    double excitation(const Event& e, double t) const {
        return std::exp(params.delta * (e.magnitude - params.m0)) * etas_kernel(params, t - e.t);
    }
};

EtasWindowSimulator::EtasWindowSimulator(const EtasParams& params, std::span<const Event> history, double t_a,
                                         double t_b)
    : impl_(std::make_unique<Impl>()) {
    validate(params);
    if (!(t_b > t_a)) throw std::invalid_argument("simulation window is empty");
    if (!history.empty() && history.back().t >= t_a)
        throw std::invalid_argument("history must end before the simulation window");
    const std::size_t split = recent_start(history, t_a, t_b);
    const auto distant = history.first(split);
    impl_->params = params;
    impl_->t_a = t_a;
    impl_->t_b = t_b;
    impl_->recent.assign(history.begin() + static_cast<std::ptrdiff_t>(split), history.end());
    if (split > 0) {
        const Impl& w = *impl_;
        impl_->background.emplace(1, t_a, t_b, [&](int, double t) {
            double sum = 0.0;
            for (const auto& e : distant) sum += w.excitation(e, t);
            return sum;
        });
    }
}

EtasWindowSimulator::~EtasWindowSimulator() = default;
EtasWindowSimulator::EtasWindowSimulator(EtasWindowSimulator&&) noexcept = default;

std::vector<Event> EtasWindowSimulator::run(std::mt19937_64& rng, const SimulationOptions& opts) const {
    const Impl& w = *impl_;
    const EtasParams& params = w.params;
    std::vector<Event> out;

    // Right-continuous version: events at exactly t contribute their full
    // kernel value, which is finite for ETAS.
    auto intensity = [&](double t) {
        double lam = params.mu + (w.background ? (*w.background)(0, t) : 0.0);
        for (const auto& e : w.recent) lam += w.excitation(e, t);
        for (const auto& e : out) lam += w.excitation(e, t);
        return lam;
    };

    double t = w.t_a;
    while (true) {
        const double bound = intensity(t);
        const double cand = t + exponential(rng, bound);
        if (cand >= w.t_b) break;
        const double lam = intensity(cand);
        check_bound(lam, bound, cand);
        t = cand;
        if (uniform(rng) * bound > lam) continue;
        out.push_back({cand, sample_mark_etas(params, uniform(rng))});
        if (out.size() > opts.cap)
            throw RunawayError("simulation exceeded the cap of " + std::to_string(opts.cap) + " events");
        if (opts.on_event && opts.on_event({cand, out.back().magnitude, 0})) break;
    }
    return out;
}

std::vector<Event> simulate_etas(const EtasParams& params, std::span<const Event> history, double t_a, double t_b,
                                 std::mt19937_64& rng, const SimulationOptions& opts) {
    return EtasWindowSimulator(params, history, t_a, t_b).run(rng, opts);
}

namespace {

Catalogue wrap(std::vector<Event> events, double m0, double horizon, std::uint64_t seed) {
    Catalogue cat;
    cat.events = std::move(events);
    cat.m0 = m0;
    cat.horizon_t = horizon;
    cat.origin_utc = format_iso8601(0.0);
    cat.source_meta = {{"format", "simulated"}, {"seed", std::to_string(seed)}};
    validate(cat);
    return cat;
}

}  // namespace

Catalogue simulate_catalogue(const MdfhpParams& params, double horizon, std::uint64_t seed,
                             const SimulationOptions& opts) {
    auto rng = make_rng(seed, 0, 0);
    const auto sim = simulate_mdfhp(params, {}, 0.0, horizon, rng, opts);
    std::vector<Event> events;
    events.reserve(sim.size());
    for (const auto& e : sim) events.push_back({e.t, e.magnitude});
    return wrap(std::move(events), params.m0, horizon, seed);
}

Catalogue simulate_catalogue(const EtasParams& params, double horizon, std::uint64_t seed,
                             const SimulationOptions& opts) {
    auto rng = make_rng(seed, 0, 0);
    return wrap(simulate_etas(params, {}, 0.0, horizon, rng, opts), params.m0, horizon, seed);
}

Eigen::VectorXd stationary_rates(const MdfhpParams& params) {
    validate(params);
    const int n = params.nb;
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) g(i, j) = branching_ratio(params, i, j);
    const double radius = g.eigenvalues().cwiseAbs().maxCoeff();
    if (!(radius < 1.0))
        throw std::domain_error("branching matrix has spectral radius " + std::to_string(radius) + " >= 1");
    return (Eigen::MatrixXd::Identity(n, n) - g).partialPivLu().solve(params.lambda0);
}

}  // namespace mdfhp
