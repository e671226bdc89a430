#include "mdfhp/infogain.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

#include "mdfhp/parallel.hpp"
#include "mdfhp/simulate.hpp"

namespace mdfhp {

void validate_classes(const std::vector<MagnitudeClass>& classes, double m0) {
    if (classes.empty()) throw std::invalid_argument("at least one magnitude class is required");
    constexpr double tol = 1e-9;
    if (std::abs(classes.front().lo - m0) > tol)
        throw std::invalid_argument("magnitude classes must start at M0 = " + std::to_string(m0));
    if (std::abs(classes.back().hi - kMaxMagnitude) > tol)
        throw std::invalid_argument("magnitude classes must end at 10");
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (!(classes[k].hi > classes[k].lo)) throw std::invalid_argument("magnitude class " + std::to_string(k) + " is empty");
        if (k > 0) {
            const double gap = classes[k].lo - classes[k - 1].hi;
            if (gap < -tol) throw std::invalid_argument("magnitude classes overlap");
            if (gap > tol) throw std::invalid_argument("magnitude classes leave a gap");
        }
    }
}

int class_of(const std::vector<MagnitudeClass>& classes, double m) {
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const bool top = k + 1 == classes.size();
        if (m >= classes[k].lo && (m < classes[k].hi || (top && m <= classes[k].hi))) return static_cast<int>(k);
    }
    return -1;
}

double reference_probability(double lambda_bar, double b, double dt, double lo, double hi, double m0) {
    const double occur = -std::expm1(-lambda_bar * dt);
    const double upper = std::isinf(hi) ? 0.0 : std::exp(-b * (hi - m0));
    return occur * (std::exp(-b * (lo - m0)) - upper);
}

std::vector<double> window_edges(double start, double horizon, double window_days) {
    if (!(window_days > 0)) throw std::invalid_argument("window length must be positive");
    if (!(horizon > start)) throw std::invalid_argument("horizon must exceed the first window start");
    std::vector<double> edges{start};
    for (std::size_t k = 1;; ++k) {
        const double e = start + static_cast<double>(k) * window_days;
        if (e >= horizon) break;
        edges.push_back(e);
    }
    edges.push_back(horizon);
    return edges;
}

double clamped_probability(std::size_t hits, std::size_t s) {
    const double floor = 0.5 / static_cast<double>(s);
    return std::clamp(static_cast<double>(hits) / static_cast<double>(s), floor, 1.0 - floor);
}

namespace {

double gain_term(double p, double p_ref, bool occurred) {
    return occurred ? std::log(p / p_ref) : std::log1p(-p) - std::log1p(-p_ref);
}

struct Reference {
    double lambda_bar;
    double b;
};

Reference empirical_reference(const Catalogue& cat) {
    double excess = 0.0;
    for (const auto& e : cat.events) excess += e.magnitude - cat.m0;
    if (!(excess > 0)) throw std::invalid_argument("reference mark rate needs magnitudes above M0");
    const double n = static_cast<double>(cat.size());
    return {n / cat.horizon_t, n / excess};
}

// Simulates the replicates of one window and counts, per class and replicate
// group, the replicates with at least one event of the class.
class WindowSampler {
public:
    WindowSampler(const ModelParams& model, const Catalogue& cat, const std::vector<MagnitudeClass>& classes)
        : model_(model), cat_(cat), classes_(classes) {
        if (const auto* p = std::get_if<MdfhpParams>(&model)) {
            eval_ = std::make_shared<const MdfhpEvaluator>(*p);
            labelled_ = label_events(cat, split_by_magnitude(cat, p->cuts));
        } else {
            validate(std::get<EtasParams>(model));
        }
    }

    // hits[k * groups + g]
    std::vector<std::uint32_t> run(std::size_t window, double t_a, double t_b, const IgainOptions& opts) const {
        const std::size_t nk = classes_.size();
        const std::size_t groups = opts.jackknife_groups;
        std::vector<std::uint32_t> hits(nk * groups, 0);
        const std::uint64_t all = (std::uint64_t{1} << nk) - 1;

        // History is every event with t <= t_a; the window itself is (t_a, t_b].
        const auto n_hist = static_cast<std::size_t>(
            std::upper_bound(cat_.events.begin(), cat_.events.end(), t_a,
                             [](double v, const Event& e) { return v < e.t; }) -
            cat_.events.begin());
        const double start = n_hist > 0 && cat_.events[n_hist - 1].t == t_a ? std::nextafter(t_a, t_b) : t_a;

        std::uint64_t mask = 0;
        SimulationOptions sim;
        sim.on_event = [&](const LabelledEvent& e) {
            const int k = class_of(classes_, e.magnitude);
            if (k >= 0) mask |= std::uint64_t{1} << k;
            return mask == all;
        };
        auto record = [&](std::size_t r) {
            const std::size_t g = r % groups;
            for (std::size_t k = 0; k < nk; ++k)
                if (mask & (std::uint64_t{1} << k)) ++hits[k * groups + g];
        };

        if (eval_) {
            const MdfhpWindowSimulator simulator(eval_, std::span(labelled_).first(n_hist), start, t_b);
            for (std::size_t r = 0; r < opts.replicates; ++r) {
                auto rng = make_rng(opts.seed, window, r);
                mask = 0;
                simulator.run(rng, sim);
                record(r);
            }
        } else {
            const EtasWindowSimulator simulator(std::get<EtasParams>(model_), std::span(cat_.events).first(n_hist),
                                                start, t_b);
            for (std::size_t r = 0; r < opts.replicates; ++r) {
                auto rng = make_rng(opts.seed, window, r);
                mask = 0;
                simulator.run(rng, sim);
                record(r);
            }
        }
        return hits;
    }

private:
    const ModelParams& model_;
    const Catalogue& cat_;
    const std::vector<MagnitudeClass>& classes_;
    std::shared_ptr<const MdfhpEvaluator> eval_;
    std::vector<LabelledEvent> labelled_;
};

}  // namespace

IgainReport igain(const ModelParams& model, const Catalogue& cat, const std::vector<MagnitudeClass>& classes,
                  const IgainOptions& opts) {
    validate(cat);
    validate_classes(classes, cat.m0);
    if (classes.size() > 63) throw std::invalid_argument("too many magnitude classes");
    if (opts.replicates < 2) throw std::invalid_argument("at least two replicates are required");
    if (opts.jackknife_groups < 2 || opts.jackknife_groups > opts.replicates)
        throw std::invalid_argument("jackknife groups must lie in [2, replicates]");
    const double m0 = std::visit([](const auto& p) { return p.m0; }, model);
    if (std::abs(m0 - cat.m0) > 1e-9) throw std::invalid_argument("model and catalogue use different M0");

    const auto edges = window_edges(opts.start, cat.horizon_t, opts.window_days);
    const std::size_t nw = edges.size() - 1;
    const std::size_t nk = classes.size();
    const std::size_t groups = opts.jackknife_groups;
    const Reference ref = empirical_reference(cat);

    const WindowSampler sampler(model, cat, classes);
    std::vector<std::vector<std::uint32_t>> hits(nw);
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    parallel_for(nw, opts.threads, [&](std::size_t i) {
        hits[i] = sampler.run(i, edges[i], edges[i + 1], opts);
        const std::size_t d = ++done;
        if (opts.progress) {
            std::lock_guard lock(progress_mutex);
            opts.progress(d, nw);
        }
    });

    // Observed occurrence per window and class.
    std::vector<char> occurred(nw * nk, 0);
    {
        std::size_t w = 0;
        for (const auto& e : cat.events) {
            if (!(e.t > edges.front())) continue;
            while (w + 1 < nw && e.t > edges[w + 1]) ++w;
            const int k = class_of(classes, e.magnitude);
            if (k >= 0) occurred[w * nk + static_cast<std::size_t>(k)] = 1;
        }
    }

    std::vector<std::size_t> group_size(groups, 0);
    for (std::size_t r = 0; r < opts.replicates; ++r) ++group_size[r % groups];

    IgainReport report;
    report.model = std::holds_alternative<MdfhpParams>(model) ? "mdfhp" : "etas";
    report.window_days = opts.window_days;
    report.replicates = opts.replicates;
    report.seed = opts.seed;
    report.lambda_bar = ref.lambda_bar;
    report.b = ref.b;
    report.horizon = cat.horizon_t;
    report.windows = nw;

    for (std::size_t k = 0; k < nk; ++k) {
        ClassGain cg;
        cg.cls = classes[k];
        std::vector<double> leave_out(groups, 0.0);
        for (std::size_t i = 0; i < nw; ++i) {
            const double p_ref = reference_probability(ref.lambda_bar, ref.b, edges[i + 1] - edges[i], classes[k].lo,
                                                       classes[k].hi, cat.m0);
            const bool x = occurred[i * nk + k] != 0;
            const std::uint32_t* h = &hits[i][k * groups];
            std::size_t total = 0;
            for (std::size_t g = 0; g < groups; ++g) total += h[g];
            const double raw = static_cast<double>(total) / static_cast<double>(opts.replicates);
            const double p = clamped_probability(total, opts.replicates);
            if (p > raw) ++cg.clamped_low;
            if (p < raw) ++cg.clamped_high;
            const double term = gain_term(p, p_ref, x);
            if (x) {
                ++cg.n_s;
                cg.g_s += term;
            } else {
                ++cg.n_f;
                cg.g_f += term;
            }
            for (std::size_t g = 0; g < groups; ++g)
                leave_out[g] += gain_term(clamped_probability(total - h[g], opts.replicates - group_size[g]), p_ref, x);
        }
        cg.n_total = cg.n_s + cg.n_f;
        cg.g_total = cg.g_s + cg.g_f;
        cg.rho_t = cg.g_total / cat.horizon_t;
        double mean = 0.0;
        for (const double v : leave_out) mean += v;
        mean /= static_cast<double>(groups);
        double ss = 0.0;
        for (const double v : leave_out) ss += (v - mean) * (v - mean);
        const double gd = static_cast<double>(groups);
        cg.rho_t_se = std::sqrt((gd - 1.0) / gd * ss) / cat.horizon_t;
        report.classes.push_back(cg);
    }
    return report;
}

nlohmann::json igain_to_json(const IgainReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : report.classes)
        rows.push_back({{"lo", c.cls.lo},
                        {"hi", c.cls.hi},
                        {"N_S", c.n_s},
                        {"G_S", c.g_s},
                        {"N_F", c.n_f},
                        {"G_F", c.g_f},
                        {"N", c.n_total},
                        {"G", c.g_total},
                        {"rho_T", c.rho_t},
                        {"rho_T_se", c.rho_t_se},
                        {"clamped_low", c.clamped_low},
                        {"clamped_high", c.clamped_high}});
    return {{"model", report.model},
            {"classes", rows},
            {"protocol",
             {{"window_days", report.window_days},
              {"replicates", report.replicates},
              {"seed", report.seed},
              {"windows", report.windows},
              {"horizon_days", report.horizon},
              {"reference", {{"lambda_bar", report.lambda_bar}, {"b", report.b}}}}}};
}

void write_igain_csv(std::ostream& out, const IgainReport& report) {
    out << "lo,hi,N_S,G_S,N_F,G_F,N,G,rho_T,rho_T_se,clamped_low,clamped_high\n";
    out << std::setprecision(10);
    for (const auto& c : report.classes)
        out << c.cls.lo << ',' << c.cls.hi << ',' << c.n_s << ',' << c.g_s << ',' << c.n_f << ',' << c.g_f << ','
            << c.n_total << ',' << c.g_total << ',' << c.rho_t << ',' << c.rho_t_se << ',' << c.clamped_low << ','
            << c.clamped_high << '\n';
}

}  // namespace mdfhp
