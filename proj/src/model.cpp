#include "mdfhp/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdfhp {
namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

std::string entry_name(const char* name, Eigen::Index i, Eigen::Index j) {
    return std::string(name) + "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int n, const char* name) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument(std::string("parameter '") + name + "' must be a " + std::to_string(n) + "x" +
                                    std::to_string(n) + " array");
    Eigen::MatrixXd m(n, n);
    for (int r = 0; r < n; ++r) {
        const auto row = j.at(r).get<std::vector<double>>();
        if (row.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument(std::string("parameter '") + name + "' has a ragged row");
        for (int c = 0; c < n; ++c) m(r, c) = row[c];
    }
    return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, int n, const char* name) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument(std::string("parameter '") + name + "' must have " + std::to_string(n) +
                                    " entries");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

}  // namespace

MdfhpParams MdfhpParams::zeros(double m0, std::vector<double> cuts) {
    MdfhpParams p;
    p.nb = static_cast<int>(cuts.size()) + 1;
    p.cuts = std::move(cuts);
    p.m0 = m0;
    p.lambda0 = Eigen::VectorXd::Zero(p.nb);
    p.b_mark = Eigen::VectorXd::Zero(p.nb);
    p.alpha = p.gamma = p.beta = p.c = Eigen::MatrixXd::Zero(p.nb, p.nb);
    return p;
}

void validate(const MdfhpParams& p) {
    require(p.nb >= 1, "nb must be at least 1");
    require(p.cuts.size() + 1 == static_cast<std::size_t>(p.nb), "cuts must hold nb - 1 values");
    magnitude_intervals(p.m0, p.cuts);
    const auto n = static_cast<Eigen::Index>(p.nb);
    require(p.lambda0.size() == n && p.b_mark.size() == n, "lambda0 and b_mark must have nb entries");
    for (const auto* m : {&p.alpha, &p.gamma, &p.beta, &p.c})
        require(m->rows() == n && m->cols() == n, "kernel parameter matrices must be nb x nb");
    require(p.lambda0.allFinite() && p.b_mark.allFinite() && all_finite(p.alpha) && all_finite(p.gamma) &&
                all_finite(p.beta) && all_finite(p.c),
            "parameters must be finite");
    for (Eigen::Index i = 0; i < n; ++i) {
        require(p.lambda0(i) > 0, "lambda0(" + std::to_string(i) + ") must be positive");
        require(p.b_mark(i) > 0, "b_mark(" + std::to_string(i) + ") must be positive");
        for (Eigen::Index j = 0; j < n; ++j) {
            require(p.alpha(i, j) >= 0, entry_name("alpha", i, j) + " must be non-negative");
            require(p.gamma(i, j) >= 0, entry_name("gamma", i, j) + " must be non-negative");
            require(p.beta(i, j) > 0 && p.beta(i, j) <= 1, entry_name("beta", i, j) + " must lie in (0, 1]");
            require(p.c(i, j) > 0, entry_name("c", i, j) + " must be positive");
        }
    }
}

void validate(const EtasParams& p) {
    require(std::isfinite(p.mu) && p.mu > 0, "mu must be positive");
    require(std::isfinite(p.a_prod) && p.a_prod >= 0, "A must be non-negative");
    require(std::isfinite(p.delta) && p.delta >= 0, "delta must be non-negative");
    require(std::isfinite(p.c_e) && p.c_e > 0, "c_E must be positive");
    require(std::isfinite(p.p) && p.p > 0, "p must be positive");
    require(std::isfinite(p.b_e) && p.b_e > 0, "B_E must be positive");
    require(std::isfinite(p.m0) && p.m0 < kMaxMagnitude, "m0 must be below the maximum magnitude");
}

std::vector<LabelledEvent> label_events(const Catalogue& cat, const Membership& membership) {
    const auto labels = labels_from_membership(membership, cat.size());
    std::vector<LabelledEvent> out;
    out.reserve(cat.size());
    for (std::size_t k = 0; k < cat.size(); ++k)
        if (labels[k] >= 0) out.push_back({cat.events[k].t, cat.events[k].magnitude, labels[k]});
    return out;
}

// ---------------------------------------------------------------------------

MlKernel::MlKernel(double beta, double c) : beta_(beta), c_(c), log_c_(std::log(c)) {
    if (!(beta > 0 && beta <= 1)) throw std::domain_error("kernel beta must lie in (0, 1]");
    if (!(c > 0) || !std::isfinite(c)) throw std::domain_error("kernel c must be positive");
    if (beta < 1) {
        density_table_ = mlf::cached_table(beta, beta);
        cdf_table_ = mlf::cached_table(beta, 1.0);
    }
}

double MlKernel::log_density(double log_dt) const {
    if (!density_table_) return log_c_ - c_ * std::exp(log_dt);
    return beta_ * log_c_ + (beta_ - 1.0) * log_dt + (*density_table_)(beta_ * (log_c_ + log_dt));
}

double MlKernel::density(double dt) const {
    if (!(dt > 0)) throw std::domain_error("kernel density needs dt > 0");
    if (!density_table_) return c_ * std::exp(-c_ * dt);
    return std::exp(log_density(std::log(dt)));
}

double MlKernel::cdf(double dt) const {
    if (!(dt > 0)) return 0.0;
    if (!cdf_table_) return -std::expm1(-c_ * dt);
    if (std::isinf(dt)) return 1.0;
    return -std::expm1((*cdf_table_)(beta_ * (log_c_ + std::log(dt))));
}

double etas_kernel(const EtasParams& p, double dt) { return p.a_prod * std::pow(1.0 + dt / p.c_e, -p.p); }

double etas_kernel_integral(const EtasParams& p, double dt) {
    if (!(dt > 0)) return 0.0;
    const double l = std::log1p(dt / p.c_e);
    const double q = 1.0 - p.p;
    // (1 - (1 + dt/c)^(1-p)) / (p - 1) = -expm1(q l) / (-q), which tends to l as q -> 0.
    const double shape = std::abs(q * l) < 1e-8 ? l * (1.0 + 0.5 * q * l) : std::expm1(q * l) / q;
    return p.a_prod * p.c_e * shape;
}

// ---------------------------------------------------------------------------

MdfhpEvaluator::MdfhpEvaluator(const MdfhpParams& params) : params_(params) {
    validate(params_);
    kernels_.reserve(static_cast<std::size_t>(params_.nb * params_.nb));
    for (int i = 0; i < params_.nb; ++i)
        for (int j = 0; j < params_.nb; ++j) kernels_.emplace_back(params_.beta(i, j), params_.c(i, j));
}

double MdfhpEvaluator::excitation(int i, const LabelledEvent& e, double t) const {
    if (!(e.t < t)) return 0.0;
    const int j = e.subprocess;
    const double a = params_.alpha(i, j);
    if (a == 0.0) return 0.0;
    const double log_w = params_.gamma(i, j) * (e.magnitude - params_.m0);
    return a * std::exp(log_w + kernel(i, j).log_density(std::log(t - e.t)));
}

double MdfhpEvaluator::intensity(std::span<const LabelledEvent> history, double t, int i) const {
    double sum = 0.0;
    for (const auto& e : history) {
        if (!(e.t < t)) break;
        sum += excitation(i, e, t);
    }
    return params_.lambda0(i) + sum;
}

IntensityVector MdfhpEvaluator::intensities(std::span<const LabelledEvent> history, double t) const {
    IntensityVector out(params_.nb);
    for (int i = 0; i < params_.nb; ++i) out(i) = intensity(history, t, i);
    return out;
}

double MdfhpEvaluator::compensator(std::span<const LabelledEvent> history, double t, int i) const {
    if (t < 0) throw std::domain_error("compensator needs t >= 0");
    double sum = 0.0;
    for (const auto& e : history) {
        if (!(e.t < t)) break;
        const int j = e.subprocess;
        const double a = params_.alpha(i, j);
        if (a == 0.0) continue;
        sum += a * std::exp(params_.gamma(i, j) * (e.magnitude - params_.m0)) * kernel(i, j).cdf(t - e.t);
    }
    return params_.lambda0(i) * t + sum;
}

Eigen::VectorXd MdfhpEvaluator::compensators(std::span<const LabelledEvent> history, double t) const {
    Eigen::VectorXd out(params_.nb);
    for (int i = 0; i < params_.nb; ++i) out(i) = compensator(history, t, i);
    return out;
}

double mdfhp_ground_intensity(const MdfhpParams& params, const Catalogue& cat, const Membership& membership,
                              double t, int i) {
    const auto events = label_events(cat, membership);
    return MdfhpEvaluator(params).intensity(events, t, i);
}

double mdfhp_compensator(const MdfhpParams& params, const Catalogue& cat, const Membership& membership, int i,
                         double t) {
    const auto events = label_events(cat, membership);
    return MdfhpEvaluator(params).compensator(events, t, i);
}

double etas_intensity(const EtasParams& params, std::span<const Event> history, double t) {
    validate(params);
    double sum = 0.0;
    for (const auto& e : history) {
        if (!(e.t < t)) break;
        sum += std::exp(params.delta * (e.magnitude - params.m0)) * etas_kernel(params, t - e.t);
    }
    return params.mu + sum;
}

double etas_compensator(const EtasParams& params, std::span<const Event> history, double t) {
    validate(params);
    if (t < 0) throw std::domain_error("compensator needs t >= 0");
    double sum = 0.0;
    for (const auto& e : history) {
        if (!(e.t < t)) break;
        sum += std::exp(params.delta * (e.magnitude - params.m0)) * etas_kernel_integral(params, t - e.t);
    }
    return params.mu * t + sum;
}

double etas_intensity(const EtasParams& params, const Catalogue& cat, double t) {
    return etas_intensity(params, std::span<const Event>(cat.events), t);
}

double etas_compensator(const EtasParams& params, const Catalogue& cat, double t) {
    return etas_compensator(params, std::span<const Event>(cat.events), t);
}

// ---------------------------------------------------------------------------

double truncated_exp_density(double b, double lo, double hi, double m) {
    if (m < lo || m > hi) return 0.0;
    return b * std::exp(-b * (m - lo)) / -std::expm1(-b * (hi - lo));
}

double truncated_exp_mass(double b, double lo, double hi, double a, double z) {
    a = std::max(a, lo);
    z = std::min(z, hi);
    if (!(z > a)) return 0.0;
    return std::exp(-b * (a - lo)) * -std::expm1(-b * (z - a)) / -std::expm1(-b * (hi - lo));
}

double truncated_exp_quantile(double b, double lo, double hi, double u) {
    if (!(u >= 0 && u <= 1)) throw std::domain_error("quantile level must lie in [0, 1]");
    const double m = lo - std::log1p(u * std::expm1(-b * (hi - lo))) / b;
    return std::clamp(m, lo, hi);
}

double mark_density(const MdfhpParams& params, int i, double m) {
    const auto iv = params.intervals().at(static_cast<std::size_t>(i));
    if (m < iv.lo || m > iv.hi || (m == iv.hi && !iv.closed_above)) return 0.0;
    return truncated_exp_density(params.b_mark(i), iv.lo, iv.hi, m);
}

double etas_mark_density(const EtasParams& params, double m) {
    return truncated_exp_density(params.b_e, params.m0, kMaxMagnitude, m);
}

double subprocess_probability(const IntensityVector& intensities, int i) {
    if (intensities.size() == 0 || !(intensities.array() > 0).all())
        throw std::invalid_argument("subprocess probabilities need positive intensities");
    return intensities(i) / intensities.sum();
}

double magnitude_class_probability(const MdfhpParams& params, const IntensityVector& intensities, double lo,
                                   double hi) {
    const auto iv = params.intervals();
    double total = 0.0;
    for (int i = 0; i < params.nb; ++i) {
        const double mass = truncated_exp_mass(params.b_mark(i), iv[i].lo, iv[i].hi, lo, hi);
        if (mass > 0) total += subprocess_probability(intensities, i) * mass;
    }
    return total;
}

double etas_class_probability(const EtasParams& params, double lo, double hi) {
    return truncated_exp_mass(params.b_e, params.m0, kMaxMagnitude, lo, hi);
}

double average_class_probability(const MdfhpParams& params, const Catalogue& cat, const Membership& membership,
                                 double lo, double hi, double offset) {
    const auto events = label_events(cat, membership);
    const MdfhpEvaluator eval(params);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& e : events) {
        for (const double t : {e.t - offset, e.t, e.t + offset}) {
            if (t < 0 || t > cat.horizon_t) continue;
            sum += magnitude_class_probability(params, eval.intensities(events, t), lo, hi);
            ++count;
        }
    }
    if (count == 0) throw EmptyCatalogueError("no evaluation points for the class probability");
    return sum / static_cast<double>(count);
}

namespace {

// integral_0^D exp(k x) dx
double exp_integral(double k, double d) {
    const double kd = k * d;
    return std::abs(kd) < 1e-12 ? d * (1.0 + 0.5 * kd) : std::expm1(kd) / k;
}

}  // namespace

double expected_offspring(const MdfhpParams& params, int j, int i) {
    validate(params);
    const auto iv = params.intervals().at(static_cast<std::size_t>(i));
    const double width = iv.hi - iv.lo;
    const double b = params.b_mark(i);
    return params.alpha(j, i) * exp_integral(params.gamma(j, i) - b, width) / -std::expm1(-b * width);
}

double expected_offspring_normalised(const MdfhpParams& params, int j, int i) {
    return params.b_mark(i) * expected_offspring(params, j, i);
}

double branching_ratio(const MdfhpParams& params, int j, int i) {
    const double lo = params.intervals().at(static_cast<std::size_t>(i)).lo;
    return std::exp(params.gamma(j, i) * (lo - params.m0)) * expected_offspring_normalised(params, j, i);
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const MdfhpParams& p) {
    return {{"nb", p.nb},
            {"lambda0", vector_json(p.lambda0)},
            {"alpha", matrix_json(p.alpha)},
            {"gamma", matrix_json(p.gamma)},
            {"beta", matrix_json(p.beta)},
            {"c", matrix_json(p.c)},
            {"b_mark", vector_json(p.b_mark)}};
}

nlohmann::json to_json(const EtasParams& p) {
    return {{"mu", p.mu}, {"A", p.a_prod}, {"delta", p.delta}, {"c_E", p.c_e}, {"p", p.p}, {"B_E", p.b_e}};
}

MdfhpParams mdfhp_params_from_json(const nlohmann::json& j) {
    MdfhpParams p = MdfhpParams::zeros(j.at("m0").get<double>(), j.at("cuts").get<std::vector<double>>());
    const auto& q = j.at("params");
    if (q.contains("nb") && q.at("nb").get<int>() != p.nb)
        throw std::invalid_argument("nb does not match the number of cuts");
    p.lambda0 = vector_from_json(q.at("lambda0"), p.nb, "lambda0");
    p.b_mark = vector_from_json(q.at("b_mark"), p.nb, "b_mark");
    p.alpha = matrix_from_json(q.at("alpha"), p.nb, "alpha");
    p.gamma = matrix_from_json(q.at("gamma"), p.nb, "gamma");
    p.beta = matrix_from_json(q.at("beta"), p.nb, "beta");
    p.c = matrix_from_json(q.at("c"), p.nb, "c");
    validate(p);
    return p;
}

EtasParams etas_params_from_json(const nlohmann::json& j) {
    const auto& q = j.at("params");
    EtasParams p;
    p.m0 = j.at("m0").get<double>();
    p.mu = q.at("mu").get<double>();
    p.a_prod = q.at("A").get<double>();
    p.delta = q.at("delta").get<double>();
    p.c_e = q.at("c_E").get<double>();
    p.p = q.at("p").get<double>();
    p.b_e = q.at("B_E").get<double>();
    validate(p);
    return p;
}

nlohmann::json model_to_json(const ModelParams& p, const std::string& fitted_on) {
    nlohmann::json j;
    if (const auto* m = std::get_if<MdfhpParams>(&p)) {
        j = {{"model_type", "mdfhp"}, {"m0", m->m0}, {"cuts", m->cuts}, {"params", to_json(*m)}};
    } else {
        const auto& e = std::get<EtasParams>(p);
        j = {{"model_type", "etas"}, {"m0", e.m0}, {"cuts", nlohmann::json::array()}, {"params", to_json(e)}};
    }
    j["fitted_on"] = fitted_on;
    return j;
}

ModelParams model_from_json(const nlohmann::json& j, std::string* fitted_on) {
    const auto type = j.at("model_type").get<std::string>();
    if (fitted_on) *fitted_on = j.value("fitted_on", std::string());
    if (type == "mdfhp") return mdfhp_params_from_json(j);
    if (type == "etas") return etas_params_from_json(j);
    throw std::invalid_argument("unknown model_type '" + type + "'");
}

}  // namespace mdfhp
