#include "mdfhp/estimate.hpp"
#include "mdfhp/simulate.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mdfhp;

namespace {

Catalogue make_catalogue(std::vector<Event> events, double m0, double horizon) {
    Catalogue cat;
    cat.events = std::move(events);
    cat.m0 = m0;
    cat.horizon_t = horizon;
    cat.origin_utc = "2000-01-01T00:00:00Z";
    return cat;
}

Catalogue random_catalogue(std::mt19937_64& rng, int n, double horizon, double m0, double b) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> times;
    for (int k = 0; k < n; ++k) times.push_back(horizon * u(rng));
    std::sort(times.begin(), times.end());
    std::vector<Event> ev;
    for (const double t : times) ev.push_back({t, std::min(m0 - std::log1p(-u(rng)) / b, 9.9)});
    return make_catalogue(std::move(ev), m0, horizon);
}

MdfhpParams random_params(std::mt19937_64& rng, double m0, std::vector<double> cuts) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto p = MdfhpParams::zeros(m0, std::move(cuts));
    for (int i = 0; i < p.nb; ++i) {
        p.lambda0(i) = 0.05 + u(rng);
        p.b_mark(i) = 0.5 + 2.0 * u(rng);
        for (int j = 0; j < p.nb; ++j) {
            p.alpha(i, j) = u(rng);
            p.gamma(i, j) = 2.0 * u(rng);
            p.beta(i, j) = u(rng) < 0.2 ? 1.0 : 0.3 + 0.7 * u(rng);
            p.c(i, j) = 0.1 + 4.9 * u(rng);
        }
    }
    return p;
}

// Direct evaluation through the model's intensity, compensator and mark density.
double brute_force_loglik(const MdfhpParams& p, const Catalogue& cat) {
    const auto mem = split_by_magnitude(cat, p.cuts);
    const auto events = label_events(cat, mem);
    const MdfhpEvaluator eval(p);
    double ll = 0.0;
    for (const auto& e : events) {
        ll += std::log(eval.intensity(events, e.t, e.subprocess));
        ll += std::log(mark_density(p, e.subprocess, e.magnitude));
    }
    for (int i = 0; i < p.nb; ++i) ll -= eval.compensator(events, cat.horizon_t, i);
    return ll;
}

}  // namespace

TEST(InformationCriteria, PublishedValues) {
    const auto japan = information_criteria(-1553.0, 20, 1501);
    EXPECT_NEAR(japan.aic, 3146.0, 1e-9);
    EXPECT_NEAR(japan.bic, 3252.3, 0.05);
    const auto ma = information_criteria(-2463.9, 20, 4135);
    EXPECT_NEAR(ma.aic, 4967.8, 1e-9);
    EXPECT_NEAR(ma.bic, 5094.4, 0.1);
    const auto zero = information_criteria(0.0, 0, 1);
    EXPECT_EQ(zero.aic, 0.0);
    EXPECT_EQ(zero.bic, 0.0);
    EXPECT_THROW(information_criteria(0.0, 1, 0), std::invalid_argument);
}

TEST(MarkRate, MatchesNumericalMaximum) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double width = 0.3 + 4.0 * u(rng);
        const double b_true = 0.5 + 3.0 * u(rng);
        const int n = 50 + static_cast<int>(200 * u(rng));
        double sum = 0.0;
        for (int k = 0; k < n; ++k) sum += truncated_exp_quantile(b_true, 0.0, width, u(rng));
        const double mean = sum / n;
        if (mean >= 0.5 * width) continue;
        auto negll = [&](double b) { return -(n * std::log(b) - b * sum - n * std::log(-std::expm1(-b * width))); };
        const auto best = boost::math::tools::brent_find_minima(negll, 1e-6, 50.0, 50);
        EXPECT_NEAR(truncated_exp_rate_mle(sum, static_cast<std::size_t>(n), width), best.first, 1e-6 * best.first);
    }
}

TEST(MarkRate, UniformLimitReturnsFloor) {
    EXPECT_EQ(truncated_exp_rate_mle(10 * 0.6, 10, 1.0), 1e-8);
    EXPECT_EQ(truncated_exp_rate_mle(10 * 0.5, 10, 1.0, 1e-4), 1e-4);
    EXPECT_THROW(truncated_exp_rate_mle(0.0, 5, 1.0), std::invalid_argument);
}

TEST(Loglik, PoissonReduction) {
    std::mt19937_64 rng(3);
    const auto cat = random_catalogue(rng, 80, 400.0, 4.0, 2.3);
    auto p = MdfhpParams::zeros(4.0, {4.5});
    p.lambda0 << 0.07, 0.13;
    p.b_mark << 2.0, 1.7;
    p.beta.setConstant(0.7);
    p.c.setConstant(1.0);
    const auto mem = split_by_magnitude(cat, p.cuts);
    const auto parts = loglik_parts_mdfhp(p, cat, mem);

    double expected_i = 0.0, expected_j = 0.0;
    for (int i = 0; i < 2; ++i) {
        expected_i += static_cast<double>(mem[i].size()) * std::log(p.lambda0(i));
        for (const auto k : mem[i]) expected_j += std::log(mark_density(p, i, cat.events[k].magnitude));
    }
    EXPECT_NEAR(parts.intensity_term, expected_i, 1e-10);
    EXPECT_NEAR(parts.mark_term, expected_j, 1e-9);
    EXPECT_NEAR(parts.compensator_term, (0.07 + 0.13) * 400.0, 1e-9);
    EXPECT_NEAR(parts.total, expected_i + expected_j - 80.0, 1e-9);
}

TEST(Loglik, PartsAddUp) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const auto cat = random_catalogue(rng, 60, 200.0, 4.0, 2.0);
        const auto p = random_params(rng, 4.0, {4.6});
        const auto parts = loglik_parts_mdfhp(p, cat, split_by_magnitude(cat, p.cuts));
        EXPECT_NEAR(parts.total, parts.intensity_term + parts.mark_term - parts.compensator_term, 1e-9);
        EXPECT_NEAR(parts.compensator_term, parts.compensators.sum(), 1e-9);
    }
}

TEST(Loglik, MatchesBruteForce) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const auto cat = random_catalogue(rng, 10, 30.0, 4.0, 1.5);
        const auto p = random_params(rng, 4.0, {4.7});
        const auto mem = split_by_magnitude(cat, p.cuts);
        if (mem[0].empty() || mem[1].empty()) continue;
        EXPECT_NEAR(loglik_mdfhp(p, cat, mem), brute_force_loglik(p, cat), 1e-6) << "trial " << trial;
    }
}

TEST(Loglik, InterpolatedKernelAccuracy) {
    // Strong clustering and extreme kernel shapes on a larger catalogue.
    auto truth = fixtures::japan_mdfhp();
    const auto cat = simulate_catalogue(truth, 2000.0, 4);
    ASSERT_GT(cat.size(), 300u);
    const auto mem = split_by_magnitude(cat, truth.cuts);
    const MdfhpLikelihood lik(cat, mem, truth.cuts);
    const auto events = label_events(cat, mem);
    for (const double beta : {0.25, 0.75, 0.999, 1.0}) {
        for (const double c : {0.02, 1.0, 20.0}) {
            auto p = truth;
            p.beta.setConstant(beta);
            p.c.setConstant(c);
            const MdfhpEvaluator eval(p);
            for (int i = 0; i < p.nb; ++i) {
                double exact = 0.0;
                for (const auto& e : events)
                    if (e.subprocess == i) exact += std::log(eval.intensity(events, e.t, i));
                const auto [sl, comp] = lik.row_terms(p, i);
                EXPECT_NEAR(sl, exact, 1e-8 * static_cast<double>(lik.count(i)))
                    << "beta " << beta << " c " << c << " row " << i;
                EXPECT_NEAR(comp, eval.compensator(events, cat.horizon_t, i), 1e-9 * comp);
            }
        }
    }
}

TEST(Loglik, TimeRescalingShiftsByEventCount) {
    // Stretching time by s with lambda0 / s and c / s leaves every compensator
    // unchanged and divides every intensity by s.
    std::mt19937_64 rng(23);
    const auto cat = random_catalogue(rng, 120, 300.0, 4.0, 2.0);
    const auto p = random_params(rng, 4.0, {4.5});
    const double s = 3.7;
    auto stretched = cat;
    for (auto& e : stretched.events) e.t *= s;
    stretched.horizon_t *= s;
    auto q = p;
    q.lambda0 /= s;
    q.c /= s;
    const double ll = loglik_mdfhp(p, cat, split_by_magnitude(cat, p.cuts));
    const double ll_s = loglik_mdfhp(q, stretched, split_by_magnitude(stretched, q.cuts));
    EXPECT_NEAR(ll_s, ll - 120.0 * std::log(s), 1e-6);
}

TEST(Loglik, UnassignedEventGivesSentinel) {
    auto cat = make_catalogue({{1.0, 4.2}, {2.0, 4.1}, {3.0, 4.8}}, 4.0, 10.0);
    auto p = MdfhpParams::zeros(4.0, {4.5});
    p.lambda0 << 0.1, 0.1;
    p.b_mark << 1.0, 1.0;
    p.beta.setConstant(0.5);
    p.c.setConstant(1.0);
    Membership partial = split_by_magnitude(cat, p.cuts);
    partial[1].pop_back();
    EXPECT_EQ(loglik_mdfhp(p, cat, partial), kLoglikSentinel);
}

TEST(Loglik, EtasMatchesDirectEvaluation) {
    std::mt19937_64 rng(29);
    const auto cat = random_catalogue(rng, 150, 500.0, 4.0, 2.4);
    for (const auto& p : {fixtures::middle_america_etas(), EtasParams{0.2, 0.5, 1.2, 0.1, 1.0, 2.0, 4.0}}) {
        double ll = 0.0;
        for (const auto& e : cat.events) {
            const std::span<const Event> before(cat.events.data(),
                                                static_cast<std::size_t>(&e - cat.events.data()));
            ll += std::log(etas_intensity(p, before, e.t)) + std::log(etas_mark_density(p, e.magnitude));
        }
        ll -= etas_compensator(p, cat, cat.horizon_t);
        EXPECT_NEAR(loglik_etas(p, cat), ll, 1e-8 * std::abs(ll));
    }
}

TEST(Loglik, EtasInterpolationOnClusteredCatalogue) {
    const auto truth = fixtures::japan_etas();
    const auto cat = simulate_catalogue(truth, 3000.0, 12);
    ASSERT_GT(cat.size(), 200u);
    const EtasLikelihood lik(cat);
    for (const double c : {0.001, 0.03, 2.0}) {
        for (const double pw : {0.8, 1.0, 2.5}) {
            EtasParams p = truth;
            p.c_e = c;
            p.p = pw;
            double exact = 0.0;
            for (std::size_t k = 0; k < cat.size(); ++k)
                exact += std::log(etas_intensity(p, std::span<const Event>(cat.events.data(), k), cat.events[k].t));
            EXPECT_NEAR(lik.time_terms(p).first, exact, 1e-8 * static_cast<double>(cat.size()))
                << "c " << c << " p " << pw;
        }
    }
}

TEST(Intervals, QuadraticToyHasExactWidth) {
    // loglik = -sum (x_k - mu_k)^2 / (2 sigma_k^2) in log parameters.
    Eigen::VectorXd mu(3), sigma(3);
    mu << std::log(0.5), std::log(2.0), 0.3;
    sigma << 0.1, 0.4, 0.05;
    auto f = [&](const Eigen::VectorXd& x) {
        return -0.5 * ((x - mu).array() / sigma.array()).square().sum();
    };
    const Eigen::MatrixXd h = finite_difference_hessian(f, mu, 1e-3);
    const auto iv = log_space_intervals({"a", "b", "c"}, mu, h, 0.90);
    const double z = 1.6448536269514722;
    for (int k = 0; k < 3; ++k) {
        ASSERT_TRUE(iv[k].available);
        EXPECT_NEAR(iv[k].se_log, sigma(k), 1e-6);
        EXPECT_NEAR(std::log(iv[k].hi) - std::log(iv[k].lo), 2.0 * z * sigma(k), 1e-5);
        EXPECT_NEAR(iv[k].estimate, std::exp(mu(k)), 1e-12);
    }
}

TEST(Intervals, FlatDirectionIsUnavailable) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 3);
    h(0, 0) = -4.0;
    h(1, 1) = -9.0;  // parameter 2 has no curvature
    const auto iv = log_space_intervals({"a", "b", "c"}, Eigen::VectorXd::Zero(3), h, 0.95);
    EXPECT_TRUE(iv[0].available);
    EXPECT_TRUE(iv[1].available);
    EXPECT_FALSE(iv[2].available);
    EXPECT_NEAR(iv[0].se_log, 0.5, 1e-12);
}

TEST(Intervals, FiniteDifferenceHessianOfKnownFunction) {
    auto f = [](const Eigen::VectorXd& x) { return std::sin(x(0)) * std::exp(x(1)) + x(0) * x(0) * x(1); };
    Eigen::VectorXd x(2);
    x << 0.4, -0.3;
    const auto h = finite_difference_hessian(f, x, 1e-4);
    EXPECT_NEAR(h(0, 0), -std::sin(0.4) * std::exp(-0.3) + 2 * -0.3, 1e-6);
    EXPECT_NEAR(h(0, 1), std::cos(0.4) * std::exp(-0.3) + 2 * 0.4, 1e-6);
    EXPECT_NEAR(h(1, 1), std::sin(0.4) * std::exp(-0.3), 1e-6);
    EXPECT_EQ(h(0, 1), h(1, 0));
}

TEST(Fit, PoissonCatalogueRecoversRates) {
    std::mt19937_64 rng(31);
    const auto cat = random_catalogue(rng, 300, 1000.0, 4.0, 2.2);
    const std::vector<double> cuts{4.4};
    const auto mem = split_by_magnitude(cat, cuts);
    FitOptions opts;
    opts.restarts = 1;
    const auto res = fit(ModelType::mdfhp, cat, cuts, std::nullopt, opts);
    const auto& p = std::get<MdfhpParams>(res.params);
    for (int i = 0; i < 2; ++i) {
        const double rate = static_cast<double>(mem[i].size()) / cat.horizon_t;
        // Excitation is absorbed into a small alpha; total rate is conserved.
        EXPECT_NEAR(res.parts.compensators(i), static_cast<double>(mem[i].size()), 0.02 * mem[i].size());
        EXPECT_GT(p.lambda0(i), 0.6 * rate);
    }
    // The fit is at least as good as the homogeneous Poisson MLE.
    auto pois = p;
    pois.alpha.setConstant(1e-10);
    for (int i = 0; i < 2; ++i) pois.lambda0(i) = static_cast<double>(mem[i].size()) / cat.horizon_t;
    EXPECT_GE(res.loglik, loglik_mdfhp(pois, cat, mem) - 1e-6);
    EXPECT_EQ(res.n_params, 20);
    EXPECT_EQ(res.n_events, 300u);
    EXPECT_NEAR(res.aic, -2 * res.loglik + 40, 1e-9);
    EXPECT_EQ(res.catalogue_hash, content_hash(cat));
}

TEST(Fit, TraceIsConsistent) {
    std::mt19937_64 rng(37);
    const auto cat = random_catalogue(rng, 150, 600.0, 4.0, 2.0);
    FitOptions opts;
    opts.restarts = 2;
    const auto res = fit(ModelType::mdfhp, cat, {4.4}, std::nullopt, opts);
    ASSERT_FALSE(res.optimizer_trace.empty());
    EXPECT_EQ(res.optimizer_trace.back().stage, "final");
    EXPECT_NEAR(res.optimizer_trace.back().best_loglik, res.loglik, 1e-9);
    // Within a row the running best never decreases.
    double last = -INFINITY;
    std::string row;
    for (const auto& t : res.optimizer_trace) {
        if (t.stage == "final") break;
        const auto r = t.stage.substr(0, t.stage.find(' ', 4));
        if (r != row) {
            row = r;
            last = -INFINITY;
        }
        EXPECT_GE(t.best_loglik, last - 1e-9) << t.stage;
        last = t.best_loglik;
    }
}

TEST(Fit, EtasBeatsTruthOnItsOwnSimulation) {
    const EtasParams truth{0.3, 0.4, 1.2, 0.05, 1.15, 2.3, 4.0};
    const auto cat = simulate_catalogue(truth, 1500.0, 8);
    ASSERT_GT(cat.size(), 300u);
    FitOptions opts;
    opts.restarts = 2;
    const auto res = fit(ModelType::etas, cat, {}, std::nullopt, opts);
    EXPECT_GE(res.loglik, loglik_etas(truth, cat) - 1e-6);
    EXPECT_EQ(res.n_params, 6);
    const auto& p = std::get<EtasParams>(res.params);
    EXPECT_NEAR(p.b_e, EtasLikelihood(cat).mark_rate_mle(), 1e-12);
    ASSERT_EQ(res.ci.size(), 6u);
    EXPECT_EQ(res.ci[0].name, "mu");
    EXPECT_EQ(res.ci[5].name, "B_E");
}

TEST(Fit, RejectsSparseSubprocessAndWrongInit) {
    const auto cat = make_catalogue({{1.0, 4.1}, {2.0, 4.2}, {3.0, 5.1}, {4.0, 4.3}}, 4.0, 10.0);
    EXPECT_THROW(fit(ModelType::mdfhp, cat, {5.0}), std::invalid_argument);
    const ModelParams etas = fixtures::japan_etas();
    EXPECT_THROW(fit(ModelType::mdfhp, cat, {4.15}, etas), std::invalid_argument);
}

TEST(Fit, ParameterNames) {
    const auto names = parameter_names(fixtures::japan_mdfhp());
    ASSERT_EQ(names.size(), 20u);
    EXPECT_EQ(names[0], "lambda0_11");
    EXPECT_EQ(names[3], "alpha_12");
    EXPECT_EQ(names[4], "alpha_21");
    EXPECT_EQ(names[18], "B_11");
    EXPECT_EQ(parse_model_type("etas"), ModelType::etas);
    EXPECT_THROW(parse_model_type("poisson"), std::invalid_argument);
}

TEST(Fit, JsonRoundTrip) {
    FitResult r;
    r.params = fixtures::japan_mdfhp();
    r.loglik = -1553.0;
    r.aic = 3146.0;
    r.bic = 3252.3;
    r.n_params = 20;
    r.n_events = 1501;
    r.parts.intensity_term = -10.0;
    r.parts.mark_term = 3.0;
    r.parts.compensators = Eigen::Vector2d(300.0, 1200.0);
    r.ci = {{"lambda0_11", 0.029, 0.02, 0.04, 0.2, true}, {"alpha_11", 0.007, 0.0, 0.0, 0.0, false}};
    r.optimizer_trace = {{"row 1 start 0", 100, -700.0}, {"final", 0, -1553.0}};
    r.catalogue_hash = "abc123";
    r.converged = true;
    const auto back = fit_from_json(fit_to_json(r));
    EXPECT_EQ(back.model_type, ModelType::mdfhp);
    EXPECT_EQ(back.loglik, r.loglik);
    EXPECT_EQ(back.n_events, 1501u);
    EXPECT_EQ(back.catalogue_hash, "abc123");
    EXPECT_EQ(back.parts.compensators(1), 1200.0);
    ASSERT_EQ(back.ci.size(), 2u);
    EXPECT_TRUE(back.ci[0].available);
    EXPECT_EQ(back.ci[0].hi, 0.04);
    EXPECT_FALSE(back.ci[1].available);
    ASSERT_EQ(back.optimizer_trace.size(), 2u);
    EXPECT_EQ(back.optimizer_trace[0].evaluations, 100);
    const auto& p = std::get<MdfhpParams>(back.params);
    EXPECT_EQ(p.c(0, 0), 5.452);
    EXPECT_TRUE(back.converged);
}
