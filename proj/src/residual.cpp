#include "mdfhp/residual.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>

namespace mdfhp {

std::vector<double> uniform_spacings(std::span<const double> taus) {
    std::vector<double> u;
    u.reserve(taus.size());
    double prev = 0.0;
    for (const double tau : taus) {
        u.push_back(-std::expm1(-(tau - prev)));
        prev = tau;
    }
    return u;
}

ResidualSeries transformed_times(const ModelParams& params, const Catalogue& cat) {
    validate(cat);
    ResidualSeries out;
    if (const auto* p = std::get_if<MdfhpParams>(&params)) {
        validate(*p);
        if (p->m0 != cat.m0) throw std::invalid_argument("model m0 does not match the catalogue");
        const auto membership = split_by_magnitude(cat, p->cuts);
        const auto events = label_events(cat, membership);
        const MdfhpEvaluator eval(*p);
        const auto n = static_cast<std::size_t>(p->nb);
        out.taus.resize(n);
        out.indices = membership;
        for (std::size_t k = 0; k < events.size(); ++k) {
            const int j = events[k].subprocess;
            out.taus[static_cast<std::size_t>(j)].push_back(
                eval.compensator(std::span(events).first(k), events[k].t, j));
        }
        const auto total = eval.compensators(events, cat.horizon_t);
        out.horizon_compensator.assign(total.data(), total.data() + total.size());
    } else {
        const auto& e = std::get<EtasParams>(params);
        validate(e);
        if (e.m0 != cat.m0) throw std::invalid_argument("model m0 does not match the catalogue");
        const std::span<const Event> all(cat.events);
        out.taus.resize(1);
        out.indices.resize(1);
        for (std::size_t k = 0; k < cat.size(); ++k) {
            out.taus[0].push_back(etas_compensator(e, all.first(k), cat.events[k].t));
            out.indices[0].push_back(k);
        }
        out.horizon_compensator = {etas_compensator(e, all, cat.horizon_t)};
    }
    for (const auto& taus : out.taus) out.u.push_back(uniform_spacings(taus));
    return out;
}

ResidualSeries transformed_times(const FitResult& fit, const Catalogue& cat) {
    return transformed_times(fit.params, cat);
}

std::vector<PathPoint> mean_removed_path(const ResidualSeries& series, std::size_t stream) {
    const auto& taus = series.taus.at(stream);
    std::vector<PathPoint> path;
    path.reserve(taus.size());
    for (std::size_t k = 0; k < taus.size(); ++k) path.push_back({k + 1, taus[k] - static_cast<double>(k + 1)});
    return path;
}

double band_half_width(double b, std::size_t n) { return b * std::sqrt(static_cast<double>(n)); }

double kolmogorov_survival(double x) {
    if (!(x > 0)) return 1.0;
    if (x < 0.2) {
        // Jacobi theta form of the CDF converges fast for small x.
        const double y = -std::numbers::pi * std::numbers::pi / (8.0 * x * x);
        double s = 0.0;
        for (int k = 1; k <= 7; k += 2) s += std::exp(y * k * k);
        return 1.0 - std::sqrt(2.0 * std::numbers::pi) / x * s;
    }
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * x * x);
        s += (k % 2 == 1 ? term : -term);
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

TestResult ks_uniform_test(std::span<const double> u, KsAlternative alt) {
    const std::size_t n = u.size();
    if (n < 5) throw InsufficientDataError("KS test needs at least 5 values, got " + std::to_string(n));
    std::vector<double> s(u.begin(), u.end());
    std::sort(s.begin(), s.end());
    const double nn = static_cast<double>(n);
    double d_plus = 0.0, d_minus = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d_plus = std::max(d_plus, static_cast<double>(i + 1) / nn - s[i]);
        d_minus = std::max(d_minus, s[i] - static_cast<double>(i) / nn);
    }
    TestResult r;
    r.n = n;
    switch (alt) {
        case KsAlternative::two_sided:
            r.statistic = std::max(d_plus, d_minus);
            r.p_value = kolmogorov_survival(std::sqrt(nn) * r.statistic);
            break;
        case KsAlternative::greater:
            r.statistic = d_plus;
            r.p_value = std::exp(-2.0 * nn * d_plus * d_plus);
            break;
        case KsAlternative::less:
            r.statistic = d_minus;
            r.p_value = std::exp(-2.0 * nn * d_minus * d_minus);
            break;
    }
    return r;
}

TestResult ks_two_sample_test(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InsufficientDataError("two-sample KS test needs two nonempty samples");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    TestResult r;
    r.statistic = d;
    r.n = x.size() + y.size();
    r.p_value = kolmogorov_survival(std::sqrt(n * m / (n + m)) * d);
    return r;
}

TestResult pearson_test(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("Pearson test needs equally long series");
    const std::size_t m = x.size();
    if (m < 3) throw InsufficientDataError("Pearson test needs at least 3 pairs");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(m);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(m);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    const auto [xlo, xhi] = std::minmax_element(x.begin(), x.end());
    const auto [ylo, yhi] = std::minmax_element(y.begin(), y.end());
    if (*xlo == *xhi || *ylo == *yhi || !(sxx > 0) || !(syy > 0))
        throw DegenerateDataError("Pearson test needs non-constant series");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = static_cast<double>(m) - 2.0;
    TestResult out;
    out.n = m;
    if (std::abs(r) >= 1.0) {
        out.statistic = r > 0 ? INFINITY : -INFINITY;
        out.p_value = 0.0;
        return out;
    }
    out.statistic = r * std::sqrt(df) / std::sqrt(1.0 - r * r);
    const boost::math::students_t dist(df);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.statistic)));
    return out;
}

TestResult pearson_serial_test(std::span<const double> u) {
    if (u.size() < 10) throw InsufficientDataError("Pearson serial test needs at least 10 values, got " +
                                                   std::to_string(u.size()));
    auto r = pearson_test(u.first(u.size() - 1), u.subspan(1));
    r.n = u.size();
    return r;
}

std::vector<StreamDiagnostics> diagnose(const ResidualSeries& series, KsAlternative alt) {
    std::vector<StreamDiagnostics> out;
    for (std::size_t j = 0; j < series.streams(); ++j) {
        StreamDiagnostics d;
        d.n = series.taus[j].size();
        d.horizon_compensator = j < series.horizon_compensator.size() ? series.horizon_compensator[j] : 0.0;
        if (d.n >= 5) d.ks = ks_uniform_test(series.u[j], alt);
        if (d.n >= 10) d.pearson = pearson_serial_test(series.u[j]);
        const double w95 = band_half_width(kBand95, d.n);
        const double w99 = band_half_width(kBand99, d.n);
        for (const auto& pt : mean_removed_path(series, j)) {
            d.max_abs_path = std::max(d.max_abs_path, std::abs(pt.value));
            d.min_path = std::min(d.min_path, pt.value);
            if (std::abs(pt.value) > w95) d.inside_95 = false;
            if (std::abs(pt.value) > w99) d.inside_99 = false;
            if (pt.value < -w99) d.below_99 = true;
        }
        out.push_back(d);
    }
    return out;
}

std::vector<CrossStreamTest> cross_stream_independence(const MdfhpParams& params, const Catalogue& cat) {
    const auto membership = split_by_magnitude(cat, params.cuts);
    const auto events = label_events(cat, membership);
    const MdfhpEvaluator eval(params);
    const auto n = static_cast<std::size_t>(params.nb);
    const auto bins = static_cast<std::size_t>(std::ceil(eval.compensators(events, cat.horizon_t).sum()));
    std::vector<std::vector<double>> counts(n, std::vector<double>(std::max<std::size_t>(bins, 1), 0.0));
    for (std::size_t k = 0; k < events.size(); ++k) {
        const double pooled = eval.compensators(std::span(events).first(k), events[k].t).sum();
        const auto b = std::min(static_cast<std::size_t>(pooled), counts[0].size() - 1);
        counts[static_cast<std::size_t>(events[k].subprocess)][b] += 1.0;
    }
    std::vector<CrossStreamTest> out;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            CrossStreamTest t{a, b, {}};
            try {
                t.test = pearson_test(counts[a], counts[b]);
            } catch (const std::invalid_argument&) {
                t.test = {NAN, NAN, counts[a].size()};
            }
            out.push_back(t);
        }
    return out;
}

void write_residual_csv(std::ostream& out, const ResidualSeries& series) {
    out << "stream,k,tau,path,u\n";
    out << std::setprecision(12);
    for (std::size_t j = 0; j < series.streams(); ++j)
        for (std::size_t k = 0; k < series.taus[j].size(); ++k)
            out << j + 1 << ',' << k + 1 << ',' << series.taus[j][k] << ','
                << series.taus[j][k] - static_cast<double>(k + 1) << ',' << series.u[j][k] << '\n';
}

void write_residual_svg(std::ostream& out, const ResidualSeries& series, const std::vector<std::string>& titles) {
    constexpr double panel_w = 420.0, panel_h = 260.0, margin = 50.0;
    const std::size_t n_panels = series.streams();
    const double width = margin + n_panels * (panel_w + margin);
    const double height = panel_h + 2.0 * margin;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t j = 0; j < n_panels; ++j) {
        const auto path = mean_removed_path(series, j);
        const std::size_t n = path.size();
        const double w99 = band_half_width(kBand99, n), w95 = band_half_width(kBand95, n);
        double ymax = 1.1 * w99;
        for (const auto& p : path) ymax = std::max(ymax, 1.05 * std::abs(p.value));
        const double x0 = margin + j * (panel_w + margin), y0 = margin;
        auto sx = [&](double k) { return x0 + panel_w * k / std::max<double>(1.0, static_cast<double>(n)); };
        auto sy = [&](double v) { return y0 + panel_h * (0.5 - 0.5 * v / ymax); };
        out << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
            << "\" fill=\"none\" stroke=\"black\"/>\n";
        const std::string title = j < titles.size() ? titles[j] : "stream " + std::to_string(j + 1);
        out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 - 10 << "\" text-anchor=\"middle\">" << title
            << "</text>\n";
        out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 + panel_h + 30
            << "\" text-anchor=\"middle\">CNE</text>\n";
        out << "<text x=\"" << x0 - 35 << "\" y=\"" << y0 + panel_h / 2 << "\" transform=\"rotate(-90 " << x0 - 35
            << ' ' << y0 + panel_h / 2 << ")\" text-anchor=\"middle\">MRTT</text>\n";
        auto hline = [&](double v, const char* dash) {
            out << "<line x1=\"" << x0 << "\" x2=\"" << x0 + panel_w << "\" y1=\"" << sy(v) << "\" y2=\"" << sy(v)
                << "\" stroke=\"grey\"" << dash << "/>\n";
        };
        hline(0.0, "");
        hline(w95, " stroke-dasharray=\"6 4\"");
        hline(-w95, " stroke-dasharray=\"6 4\"");
        hline(w99, " stroke-dasharray=\"1 3\"");
        hline(-w99, " stroke-dasharray=\"1 3\"");
        out << "<polyline fill=\"none\" stroke=\"black\" points=\"" << sx(0) << ',' << sy(0);
        for (const auto& p : path) out << ' ' << sx(static_cast<double>(p.k)) << ',' << sy(p.value);
        out << "\"/>\n</g>\n";
    }
    out << "</svg>\n";
}

nlohmann::json diagnostics_to_json(const std::vector<StreamDiagnostics>& diags) {
    auto arr = nlohmann::json::array();
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (std::size_t j = 0; j < diags.size(); ++j) {
        const auto& d = diags[j];
        arr.push_back({{"stream", j + 1},
                       {"n", d.n},
                       {"compensator_T", d.horizon_compensator},
                       {"ks_statistic", num(d.ks.statistic)},
                       {"ks_p", num(d.ks.p_value)},
                       {"pearson_t", num(d.pearson.statistic)},
                       {"pearson_p", num(d.pearson.p_value)},
                       {"max_abs_path", d.max_abs_path},
                       {"inside_95_band", d.inside_95},
                       {"inside_99_band", d.inside_99},
                       {"crosses_lower_99_band", d.below_99}});
    }
    return arr;
}

}  // namespace mdfhp
