#pragma once

#include <functional>

#include <Eigen/Dense>

// Thin wrappers over the GSL multidimensional minimisers.
namespace mdfhp::optimize {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Result {
    Eigen::VectorXd x;
    double value = 0.0;
    int evaluations = 0;
    int iterations = 0;
    bool converged = false;
};

// Nelder-Mead simplex (GSL nmsimplex2) from x0 with per-coordinate initial
// steps. Stops when the simplex characteristic size drops below size_tol or
// after max_evaluations objective calls.
Result nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step, double size_tol,
                   int max_evaluations);

// BFGS (GSL vector_bfgs2) with central finite-difference gradients of step h.
// Stops when the gradient norm is below grad_tol.
Result bfgs(const Objective& f, const Eigen::VectorXd& x0, double grad_tol, int max_iterations, double h = 1e-6);

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double h);

}  // namespace mdfhp::optimize
