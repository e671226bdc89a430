#pragma once

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mdfhp/catalog.hpp"
#include "mdfhp/mlf.hpp"

namespace mdfhp {

// Multidimensional fractional Hawkes process parameters. Entry (i, j) of the
// matrices is the effect of subprocess j on subprocess i. Subprocess 0 is the
// highest magnitude interval (see magnitude_intervals).
struct MdfhpParams {
    int nb = 1;
    std::vector<double> cuts;  // increasing, nb - 1 values
    double m0 = 0.0;
    Eigen::VectorXd lambda0;   // events/day
    Eigen::MatrixXd alpha;
    Eigen::MatrixXd gamma;     // 1/magnitude
    Eigen::MatrixXd beta;      // in (0, 1]
    Eigen::MatrixXd c;         // 1/day
    Eigen::VectorXd b_mark;    // 1/magnitude

    // Correctly sized parameter set with every entry zero.
    static MdfhpParams zeros(double m0, std::vector<double> cuts);

    // lambda0, alpha, gamma, beta, c and the mark rates: nb + 4 nb^2 + nb.
    int n_params() const { return 2 * nb + 4 * nb * nb; }

    std::vector<MagnitudeInterval> intervals() const { return magnitude_intervals(m0, cuts); }
};

// Throws std::invalid_argument naming the first violated constraint.
void validate(const MdfhpParams& p);

// ETAS baseline: mu + sum A exp(delta (M - M0)) (1 + dt / c_E)^(-p) with
// truncated exponential marks on [M0, 10].
struct EtasParams {
    double mu = 0.0;      // events/day
    double a_prod = 0.0;
    double delta = 0.0;   // 1/magnitude
    double c_e = 0.0;     // days
    double p = 0.0;
    double b_e = 0.0;     // 1/magnitude
    double m0 = 0.0;

    static constexpr int n_params() { return 6; }
};

void validate(const EtasParams& p);

using IntensityVector = Eigen::VectorXd;

struct LabelledEvent {
    double t;
    double magnitude;
    int subprocess;
};

// Events of a catalogue paired with their subprocess, in time order.
std::vector<LabelledEvent> label_events(const Catalogue& cat, const Membership& membership);

// ---------------------------------------------------------------------------
// Kernels

// Mittag-Leffler kernel c f_beta(c dt) and its distribution function for one
// (beta, c) pair. beta < 1 goes through the cached log-space tables; beta = 1
// is the exponential kernel.
class MlKernel {
public:
    MlKernel(double beta, double c);

    double beta() const { return beta_; }
    double c() const { return c_; }

    // log(c f_beta(c dt)) for dt > 0, given log(dt).
    double log_density(double log_dt) const;
    double density(double dt) const;
    // 1 - E_beta(-(c dt)^beta); 0 for dt <= 0.
    double cdf(double dt) const;

private:
    double beta_;
    double c_;
    double log_c_;
    std::shared_ptr<const mlf::LogMlTable> density_table_;  // E_{beta,beta}
    std::shared_ptr<const mlf::LogMlTable> cdf_table_;      // E_{beta,1}
};

// ETAS kernel A (1 + dt/c_E)^(-p) and its integral from 0 to dt, both without
// the productivity factor.
double etas_kernel(const EtasParams& p, double dt);
double etas_kernel_integral(const EtasParams& p, double dt);

// ---------------------------------------------------------------------------
// Evaluation

// Holds the kernels of one MDFHP parameter set. Intensities are left limits:
// only events with t_l < t contribute.
class MdfhpEvaluator {
public:
    explicit MdfhpEvaluator(const MdfhpParams& params);

    const MdfhpParams& params() const { return params_; }
    const MlKernel& kernel(int i, int j) const { return kernels_[i * params_.nb + j]; }

    // Contribution of one past event to subprocess i at time t (0 unless e.t < t).
    double excitation(int i, const LabelledEvent& e, double t) const;

    double intensity(std::span<const LabelledEvent> history, double t, int i) const;
    IntensityVector intensities(std::span<const LabelledEvent> history, double t) const;

    double compensator(std::span<const LabelledEvent> history, double t, int i) const;
    Eigen::VectorXd compensators(std::span<const LabelledEvent> history, double t) const;

private:
    MdfhpParams params_;
    std::vector<MlKernel> kernels_;
};

double mdfhp_ground_intensity(const MdfhpParams& params, const Catalogue& cat, const Membership& membership,
                              double t, int i);
double mdfhp_compensator(const MdfhpParams& params, const Catalogue& cat, const Membership& membership, int i,
                         double t);

double etas_intensity(const EtasParams& params, std::span<const Event> history, double t);
double etas_compensator(const EtasParams& params, std::span<const Event> history, double t);
double etas_intensity(const EtasParams& params, const Catalogue& cat, double t);
double etas_compensator(const EtasParams& params, const Catalogue& cat, double t);

// ---------------------------------------------------------------------------
// Marks

// Truncated exponential density with rate b on [lo, hi), evaluated at m.
double truncated_exp_density(double b, double lo, double hi, double m);
// Probability that a truncated exponential on [lo, hi) falls in [a, z).
double truncated_exp_mass(double b, double lo, double hi, double a, double z);
// Inverse distribution function; u in [0, 1].
double truncated_exp_quantile(double b, double lo, double hi, double u);

// Mark density of subprocess i; 0 outside its interval.
double mark_density(const MdfhpParams& params, int i, double m);
// Mark density of the ETAS model on [M0, 10].
double etas_mark_density(const EtasParams& params, double m);

// lambda_i / sum_j lambda_j. Throws std::invalid_argument unless every
// intensity is positive.
double subprocess_probability(const IntensityVector& intensities, int i);

// P[M in [lo, hi)] for the next event given the ground intensities.
double magnitude_class_probability(const MdfhpParams& params, const IntensityVector& intensities, double lo,
                                   double hi);
double etas_class_probability(const EtasParams& params, double lo, double hi);

// Average of magnitude_class_probability over the event times and the points
// `offset` days before and after each event (points outside [0, horizon] are
// skipped).
double average_class_probability(const MdfhpParams& params, const Catalogue& cat, const Membership& membership,
                                 double lo, double hi, double offset = 1e-3);

// First-generation offspring in subprocess j of an event in subprocess i:
// alpha_ji * integral_0^D exp((gamma_ji - B_ii) x) / (1 - exp(-B_ii D)) dx,
// with D the width of interval i.
double expected_offspring(const MdfhpParams& params, int j, int i);
// The same expectation taken under the mark density itself (includes the
// factor B_ii), so gamma_ji = 0 gives alpha_ji.
double expected_offspring_normalised(const MdfhpParams& params, int j, int i);
// Mean number of direct offspring in j of an event in i, alpha_ji E[exp(gamma_ji (M - m0))]
// with M drawn from subprocess i's mark density. This is the branching-matrix entry.
double branching_ratio(const MdfhpParams& params, int j, int i);

// ---------------------------------------------------------------------------
// Parameter files

using ModelParams = std::variant<MdfhpParams, EtasParams>;

nlohmann::json to_json(const MdfhpParams& p);
nlohmann::json to_json(const EtasParams& p);
MdfhpParams mdfhp_params_from_json(const nlohmann::json& j);
EtasParams etas_params_from_json(const nlohmann::json& j);

// {"model_type": "mdfhp"|"etas", "m0", "cuts", "params", "fitted_on"}
nlohmann::json model_to_json(const ModelParams& p, const std::string& fitted_on = "");
ModelParams model_from_json(const nlohmann::json& j, std::string* fitted_on = nullptr);

}  // namespace mdfhp
