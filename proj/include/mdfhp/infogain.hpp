#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdfhp/catalog.hpp"
#include "mdfhp/model.hpp"

namespace mdfhp {

// Magnitude class [lo, hi); the class ending at 10 also contains 10.
struct MagnitudeClass {
    double lo;
    double hi;
};

// Classes must be sorted, contiguous and cover [m0, 10]. Throws
// std::invalid_argument otherwise (including overlaps and gaps).
void validate_classes(const std::vector<MagnitudeClass>& classes, double m0);

// Index of the class containing m, or -1.
int class_of(const std::vector<MagnitudeClass>& classes, double m);

// Probability that an empirical-rate Poisson process with untruncated
// exponential marks has at least one event in a window of length dt with
// magnitude in [lo, hi). hi may be infinite.
double reference_probability(double lambda_bar, double b, double dt, double lo, double hi, double m0);

// Window edges start, start + w, ..., horizon; the last window is whatever
// remains. Windows are (edges[i], edges[i + 1]].
std::vector<double> window_edges(double start, double horizon, double window_days);

// Monte Carlo probability guard: hits/s clamped to [1/(2s), 1 - 1/(2s)].
double clamped_probability(std::size_t hits, std::size_t s);

struct IgainOptions {
    double window_days = 2.0;
    std::size_t replicates = 2000;
    std::uint64_t seed = 0;
    double start = 1e-6;
    int threads = 1;
    // Replicates are split into this many groups for the jackknife SE.
    std::size_t jackknife_groups = 20;
    // Called after each finished window with (done, total).
    std::function<void(std::size_t, std::size_t)> progress;
};

struct ClassGain {
    MagnitudeClass cls;
    std::size_t n_s = 0;  // windows with an event of the class
    double g_s = 0.0;
    std::size_t n_f = 0;  // windows without one
    double g_f = 0.0;
    std::size_t n_total = 0;
    double g_total = 0.0;
    double rho_t = 0.0;     // g_total / T, per day
    double rho_t_se = 0.0;  // grouped jackknife over replicates
    std::size_t clamped_low = 0;
    std::size_t clamped_high = 0;
};

struct IgainReport {
    std::string model;  // "mdfhp" or "etas"
    std::vector<ClassGain> classes;
    double window_days = 0.0;
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    double lambda_bar = 0.0;  // reference rate N/T
    double b = 0.0;           // reference mark rate 1/mean(M - M0)
    double horizon = 0.0;
    std::size_t windows = 0;
};

// Retrospective window-by-window comparison of the model against the
// empirical-rate Poisson reference. Replicates for window i are simulated
// from the observed history up to the window start, with generator
// make_rng(seed, i, replicate).
IgainReport igain(const ModelParams& model, const Catalogue& cat, const std::vector<MagnitudeClass>& classes,
                  const IgainOptions& opts = {});

nlohmann::json igain_to_json(const IgainReport& report);
// One row per class: lo,hi,N_S,G_S,N_F,G_F,N,G,rho_T,rho_T_se,clamped_low,clamped_high.
void write_igain_csv(std::ostream& out, const IgainReport& report);

}  // namespace mdfhp
