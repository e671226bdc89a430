#include "mdfhp/optimize.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <memory>
#include <stdexcept>

namespace mdfhp::optimize {
namespace {

struct Context {
    const Objective* f;
    double h;
    int evaluations = 0;
};

Eigen::VectorXd to_eigen(const gsl_vector* v) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(v->size));
    for (std::size_t k = 0; k < v->size; ++k) x(static_cast<Eigen::Index>(k)) = gsl_vector_get(v, k);
    return x;
}

void copy_into(const Eigen::VectorXd& x, gsl_vector* v) {
    for (Eigen::Index k = 0; k < x.size(); ++k) gsl_vector_set(v, static_cast<std::size_t>(k), x(k));
}

double eval_f(const gsl_vector* v, void* params) {
    auto* ctx = static_cast<Context*>(params);
    ++ctx->evaluations;
    const double y = (*ctx->f)(to_eigen(v));
    return std::isfinite(y) ? y : 1e300;
}

void eval_df(const gsl_vector* v, void* params, gsl_vector* g) {
    auto* ctx = static_cast<Context*>(params);
    const Eigen::VectorXd grad = central_gradient(*ctx->f, to_eigen(v), ctx->h);
    ctx->evaluations += static_cast<int>(2 * grad.size());
    copy_into(grad, g);
}

void eval_fdf(const gsl_vector* v, void* params, double* y, gsl_vector* g) {
    *y = eval_f(v, params);
    eval_df(v, params, g);
}

struct VectorDeleter {
    void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
using VectorPtr = std::unique_ptr<gsl_vector, VectorDeleter>;

VectorPtr make_vector(const Eigen::VectorXd& x) {
    VectorPtr v(gsl_vector_alloc(static_cast<std::size_t>(x.size())));
    copy_into(x, v.get());
    return v;
}

// GSL's default handler aborts; errors are reported through return codes.
struct QuietGsl {
    QuietGsl() { gsl_set_error_handler_off(); }
};
const QuietGsl quiet_gsl;

}  // namespace

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Eigen::VectorXd xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        g(k) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

Result nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step, double size_tol,
                   int max_evaluations) {
    if (x0.size() == 0 || step.size() != x0.size()) throw std::invalid_argument("nelder_mead: bad dimensions");
    Context ctx{&f, 0.0};
    gsl_multimin_function fn{&eval_f, static_cast<std::size_t>(x0.size()), &ctx};
    auto* state = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, fn.n);
    const auto x = make_vector(x0);
    const auto s = make_vector(step);
    gsl_multimin_fminimizer_set(state, &fn, x.get(), s.get());

    Result r;
    while (ctx.evaluations < max_evaluations) {
        ++r.iterations;
        if (gsl_multimin_fminimizer_iterate(state) != GSL_SUCCESS) break;
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(state), size_tol) == GSL_SUCCESS) {
            r.converged = true;
            break;
        }
    }
    r.x = to_eigen(gsl_multimin_fminimizer_x(state));
    r.value = gsl_multimin_fminimizer_minimum(state);
    r.evaluations = ctx.evaluations;
    gsl_multimin_fminimizer_free(state);
    return r;
}

Result bfgs(const Objective& f, const Eigen::VectorXd& x0, double grad_tol, int max_iterations, double h) {
    Context ctx{&f, h};
    gsl_multimin_function_fdf fn{&eval_f, &eval_df, &eval_fdf, static_cast<std::size_t>(x0.size()), &ctx};
    auto* state = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, fn.n);
    const auto x = make_vector(x0);
    gsl_multimin_fdfminimizer_set(state, &fn, x.get(), 0.01, 0.1);

    Result r;
    r.x = x0;
    r.value = f(x0);
    for (int it = 0; it < max_iterations; ++it) {
        ++r.iterations;
        const int status = gsl_multimin_fdfminimizer_iterate(state);
        const double value = gsl_multimin_fdfminimizer_minimum(state);
        if (value < r.value) {
            r.value = value;
            r.x = to_eigen(gsl_multimin_fdfminimizer_x(state));
        }
        if (gsl_multimin_test_gradient(gsl_multimin_fdfminimizer_gradient(state), grad_tol) == GSL_SUCCESS) {
            r.converged = true;
            break;
        }
        if (status != GSL_SUCCESS) break;  // no further progress possible along the search direction
    }
    r.evaluations = ctx.evaluations;
    gsl_multimin_fdfminimizer_free(state);
    return r;
}

}  // namespace mdfhp::optimize
