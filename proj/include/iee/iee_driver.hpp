#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iee/covariance_mom.hpp"
#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/gee_solver.hpp"
#include "iee/mean_model.hpp"

namespace iee {

/// Outer-loop controls for the alternating fit. The convergence
/// criterion is the composite max-abs change
///   max_l |beta_m(l) - beta_{m-1}(l)| + max_r |v_m(r) - v_{m-1}(r)| < conv_tol,
/// first computable at the second outer step.
struct IeeOptions {
    double conv_tol = 1e-4;
    int max_outer_iters = 100;
    bool one_step_only = false;
    GeeOptions gee;
    RepairPolicy repair;
};

/// One outer step of the alternation: the coefficient estimate computed
/// from the previous covariances and the covariance estimate computed
/// from those coefficients. `criterion` is NaN where undefined (the
/// initial state and the first step, which has no predecessor pair).
struct TraceEntry {
    int iteration = 0;
    Eigen::VectorXd beta;  // empty for the initial (iteration 0) state
    Eigen::VectorXd v;
    double criterion = std::numeric_limits<double>::quiet_NaN();
};

/// Estimated linear rate of the alternation, read off the tail of the
/// trace: the geometric mean of the last K = min(3, available) successive
/// ratios
///   ||beta_{m+1} - beta_m||_inf / ||beta_m - beta_{m-1}||_inf,
/// skipping ratios with zero denominator. Absent when fewer than two
/// usable ratios exist (short traces, stalled sequences).
[[nodiscard]] inline std::optional<double> convergence_rate_diagnostic(
    const std::vector<TraceEntry>& trace) {
    std::vector<const Eigen::VectorXd*> betas;
    betas.reserve(trace.size());
    for (const auto& entry : trace) {
        if (entry.beta.size() > 0) betas.push_back(&entry.beta);
    }
    if (betas.size() < 3) return std::nullopt;

    std::vector<double> diffs;
    diffs.reserve(betas.size() - 1);
    for (size_t m = 1; m < betas.size(); ++m) {
        diffs.push_back((*betas[m] - *betas[m - 1]).lpNorm<Eigen::Infinity>());
    }
    std::vector<double> ratios;
    for (size_t m = 1; m < diffs.size(); ++m) {
        if (diffs[m - 1] > 0.0) ratios.push_back(diffs[m] / diffs[m - 1]);
    }
    if (ratios.size() < 2) return std::nullopt;

    const size_t k = std::min<size_t>(3, ratios.size());
    double log_sum = 0.0;
    for (size_t q = ratios.size() - k; q < ratios.size(); ++q) {
        if (ratios[q] == 0.0) return 0.0;  // a step landed exactly: rate indistinguishable from 0
        log_sum += std::log(ratios[q]);
    }
    return std::exp(log_sum / static_cast<double>(k));
}

/// Result of an alternating fit. `converged` reports whether the
/// composite criterion fell below conv_tol within the iteration budget
/// (the one-step procedure completes by construction and records no
/// criterion). All estimate fields are filled from the last completed
/// step even when the budget ran out, so callers can inspect partial
/// results.
struct FitResult {
    Eigen::VectorXd beta_hat;
    Eigen::VectorXd v_hat;
    std::vector<CovKey> v_keys;
    CovarianceSet covariance_set;
    Eigen::MatrixXd beta_cov;
    std::vector<TraceEntry> trace;
    bool converged = false;
    std::optional<int> steps_to_converge;
    std::optional<double> rate_estimate;

    /// Standard errors: square roots of the model-based covariance
    /// diagonal.
    [[nodiscard]] Eigen::VectorXd standard_errors() const {
        return beta_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    }
};

namespace detail {

/// Identity-start covariance vector: 1 for variances (j == k), 0 for
/// covariances, in the grouping's canonical key order. Assembling it
/// yields the identity matrix for every subject.
[[nodiscard]] inline Eigen::VectorXd identity_start_vector(const CovarianceGrouping& g) {
    Eigen::VectorXd v0(g.parameter_count());
    for (int r = 0; r < g.parameter_count(); ++r) {
        v0(r) = g.keys()[static_cast<size_t>(r)].j == g.keys()[static_cast<size_t>(r)].k
                    ? 1.0
                    : 0.0;
    }
    return v0;
}

template <typename F>
auto run_outer_step(int iteration, F&& body) {
    try {
        return body();
    } catch (const FitIterationError&) {
        throw;
    } catch (const ValidationError&) {
        throw;
    } catch (const Error& err) {
        throw FitIterationError(iteration, err.what());
    }
}

}  // namespace detail

[[nodiscard]] inline FitResult one_step_fit(const LongitudinalDataset& ds, const MeanModel& m,
                                            const CovarianceGrouping& g,
                                            const IeeOptions& opts);

/// The alternating fit: starting from identity working covariances,
/// repeatedly solve the estimating equation for the coefficients and
/// re-estimate the covariance classes by the method of moments, until the
/// composite criterion drops below conv_tol or the budget is exhausted.
/// The first coefficient estimate is therefore the identity-weighted
/// (ordinary least squares, for linear models) solution.
///
/// The trace records every outer step; entry 0 holds the identity start.
/// Budget exhaustion is reported through `converged == false`, never an
/// exception; solver and moment-estimation failures are rethrown with the
/// outer iteration index attached.
[[nodiscard]] inline FitResult fit_iee(const LongitudinalDataset& ds, const MeanModel& m,
                                       const CovarianceGrouping& g,
                                       const IeeOptions& opts = {}) {
    if (!(opts.conv_tol > 0.0)) throw ValidationError("conv_tol must be > 0");
    if (opts.max_outer_iters < 1) throw ValidationError("max_outer_iters must be >= 1");
    if (opts.one_step_only) return one_step_fit(ds, m, g, opts);

    FitResult result;
    const Eigen::VectorXd v0 = detail::identity_start_vector(g);
    result.trace.push_back(TraceEntry{0, Eigen::VectorXd(), v0,
                                      std::numeric_limits<double>::quiet_NaN()});

    CovarianceSet V = CovarianceSet::identity(ds);
    Eigen::VectorXd beta_start = Eigen::VectorXd::Zero(ds.coefficient_count());
    Eigen::VectorXd beta_prev, v_prev;
    CovarianceEstimate est;

    for (int iter = 1; iter <= opts.max_outer_iters; ++iter) {
        const Eigen::VectorXd beta = detail::run_outer_step(
            iter, [&] { return solve_gee(ds, m, V, beta_start, opts.gee); });
        est = detail::run_outer_step(iter, [&] {
            return estimate_componentwise(ds, g, m, beta, opts.repair);
        });

        double criterion = std::numeric_limits<double>::quiet_NaN();
        if (iter >= 2) {
            criterion = (beta - beta_prev).lpNorm<Eigen::Infinity>() +
                        (est.v - v_prev).lpNorm<Eigen::Infinity>();
        }
        result.trace.push_back(TraceEntry{iter, beta, est.v, criterion});

        beta_prev = beta;
        v_prev = est.v;
        V = est.assembled;
        beta_start = beta;

        if (iter >= 2 && criterion < opts.conv_tol) {
            result.converged = true;
            result.steps_to_converge = iter;
            break;
        }
    }

    result.beta_hat = beta_prev;
    result.v_hat = v_prev;
    result.v_keys = est.keys;
    result.covariance_set = est.assembled;
    result.beta_cov = detail::run_outer_step(static_cast<int>(result.trace.size()) - 1, [&] {
        return model_based_covariance(ds, m, result.beta_hat, result.covariance_set);
    });
    result.rate_estimate = convergence_rate_diagnostic(result.trace);
    return result;
}

/// The one-step (next-step) estimator: identity-weighted fit, one
/// covariance update, one refit — then stop. Asymptotically as efficient
/// as the full alternation but typically worse in small samples. The
/// returned coefficients equal the second outer step of fit_iee on the
/// same inputs exactly, including the warm start of the inner solver.
[[nodiscard]] inline FitResult one_step_fit(const LongitudinalDataset& ds, const MeanModel& m,
                                            const CovarianceGrouping& g,
                                            const IeeOptions& opts = {}) {
    FitResult result;
    const Eigen::VectorXd v0 = detail::identity_start_vector(g);
    result.trace.push_back(TraceEntry{0, Eigen::VectorXd(), v0,
                                      std::numeric_limits<double>::quiet_NaN()});

    const CovarianceSet identity = CovarianceSet::identity(ds);
    const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(ds.coefficient_count());
    const Eigen::VectorXd beta1 = detail::run_outer_step(
        1, [&] { return solve_gee(ds, m, identity, zeros, opts.gee); });
    const CovarianceEstimate est = detail::run_outer_step(
        1, [&] { return estimate_componentwise(ds, g, m, beta1, opts.repair); });
    result.trace.push_back(TraceEntry{1, beta1, est.v,
                                      std::numeric_limits<double>::quiet_NaN()});

    const Eigen::VectorXd beta3 = detail::run_outer_step(
        2, [&] { return solve_gee(ds, m, est.assembled, beta1, opts.gee); });
    result.trace.push_back(TraceEntry{2, beta3, est.v,
                                      std::numeric_limits<double>::quiet_NaN()});

    result.beta_hat = beta3;
    result.v_hat = est.v;
    result.v_keys = est.keys;
    result.covariance_set = est.assembled;
    result.beta_cov = detail::run_outer_step(2, [&] {
        return model_based_covariance(ds, m, result.beta_hat, result.covariance_set);
    });
    result.converged = true;
    result.steps_to_converge = 2;
    return result;
}

}  // namespace iee
