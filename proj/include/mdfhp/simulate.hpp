#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdfhp/catalog.hpp"
#include "mdfhp/model.hpp"

namespace mdfhp {

// Offset (days) after each event inside which no candidate is proposed; the
// thinning bound is evaluated there because the beta < 1 kernel diverges at 0+.
inline constexpr double kThinningOffset = 1e-6;

struct SimulationOptions {
    std::size_t cap = 1'000'000;  // maximum number of generated events
    double epsilon = kThinningOffset;
    // Called for each accepted event; returning true ends the simulation early.
    std::function<bool(const LabelledEvent&)> on_event;
};

class RunawayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when the thinning bound is exceeded by the intensity at a candidate.
class ThinningBoundError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Generator for replicate `stream` of window `window` under `seed`; streams
// are independent and reproducible regardless of evaluation order.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t window, std::uint64_t stream);

// Inverse-CDF mark draw for subprocess i (u in [0, 1)); the result always lies
// in the subprocess's interval.
double sample_mark(const MdfhpParams& params, int i, double u);
double sample_mark_etas(const EtasParams& params, double u);

// Simulator for one window [t_a, t_b) with a fixed history. The excitation of
// the history is prepared once, so repeated runs only pay for events near the
// window.
class MdfhpWindowSimulator {
public:
    MdfhpWindowSimulator(const MdfhpParams& params, std::span<const LabelledEvent> history, double t_a, double t_b);
    MdfhpWindowSimulator(std::shared_ptr<const MdfhpEvaluator> eval, std::span<const LabelledEvent> history,
                         double t_a, double t_b);
    MdfhpWindowSimulator(MdfhpWindowSimulator&&) noexcept;
    ~MdfhpWindowSimulator();

    std::vector<LabelledEvent> run(std::mt19937_64& rng, const SimulationOptions& opts = {}) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class EtasWindowSimulator {
public:
    EtasWindowSimulator(const EtasParams& params, std::span<const Event> history, double t_a, double t_b);
    EtasWindowSimulator(EtasWindowSimulator&&) noexcept;
    ~EtasWindowSimulator();

    std::vector<Event> run(std::mt19937_64& rng, const SimulationOptions& opts = {}) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Events in [t_a, t_b) from the MDFHP conditional on `history` (all events
// before t_a, time ordered). Each new event's subprocess is drawn with
// probability lambda_i / sum_j lambda_j at its arrival.
std::vector<LabelledEvent> simulate_mdfhp(const MdfhpParams& params, std::span<const LabelledEvent> history,
                                          double t_a, double t_b, std::mt19937_64& rng,
                                          const SimulationOptions& opts = {});
std::vector<Event> simulate_etas(const EtasParams& params, std::span<const Event> history, double t_a, double t_b,
                                 std::mt19937_64& rng, const SimulationOptions& opts = {});

// Whole synthetic catalogues on [0, horizon) with an empty initial history.
Catalogue simulate_catalogue(const MdfhpParams& params, double horizon, std::uint64_t seed,
                             const SimulationOptions& opts = {});
Catalogue simulate_catalogue(const EtasParams& params, double horizon, std::uint64_t seed,
                             const SimulationOptions& opts = {});

// Long-run event rates per subprocess, (I - G)^-1 lambda0, where G is the
// branching matrix of branching_ratio values. Throws std::domain_error when the branching
// matrix is not subcritical.
Eigen::VectorXd stationary_rates(const MdfhpParams& params);

}  // namespace mdfhp
