#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/linalg.hpp"
#include "iee/mean_model.hpp"

namespace iee {

/// Per-subject working covariance matrices, aligned with the dataset's
/// subject order; entry i is |J_i| x |J_i|, symmetric positive definite.
struct CovarianceSet {
    std::vector<Eigen::MatrixXd> matrices;

    [[nodiscard]] static CovarianceSet identity(const LongitudinalDataset& ds) {
        CovarianceSet set;
        set.matrices.reserve(static_cast<size_t>(ds.subject_count()));
        for (const auto& subject : ds.subjects()) {
            set.matrices.push_back(
                Eigen::MatrixXd::Identity(subject.n_visits(), subject.n_visits()));
        }
        return set;
    }

    [[nodiscard]] const Eigen::MatrixXd& matrix(int subject_index) const {
        return matrices[static_cast<size_t>(subject_index)];
    }
};

/// Inner-solver controls for the estimating equation. The ridge is added
/// to the normal-equations matrix only after a singular solve, never
/// silently.
struct GeeOptions {
    int max_newton_iters = 50;
    double beta_tol = 1e-10;
    double ridge = 0.0;
};

namespace detail {

inline void check_covariance_set(const LongitudinalDataset& ds, const CovarianceSet& V) {
    if (V.matrices.size() != static_cast<size_t>(ds.subject_count())) {
        throw ValidationError("covariance set has " + std::to_string(V.matrices.size()) +
                              " matrices for " + std::to_string(ds.subject_count()) +
                              " subjects");
    }
    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& M = V.matrix(i);
        if (M.rows() != ds.subject(i).n_visits() || M.cols() != ds.subject(i).n_visits()) {
            throw ValidationError("covariance matrix dimension mismatch for subject '" +
                                  ds.subject(i).subject_id + "'");
        }
    }
}

/// Accumulates the weighted normal equations at beta:
///   info  = sum_i J_i' V_i^{-1} J_i        (p x p)
///   score = sum_i J_i' V_i^{-1} (Y_i - mu_i)  (p)
/// where J_i is the mean Jacobian. Returns the max-abs estimating-function
/// value through `score`.
inline void accumulate_normal_equations(const LongitudinalDataset& ds, const MeanModel& m,
                                        const CovarianceSet& V, const Eigen::VectorXd& beta,
                                        Eigen::MatrixXd& info, Eigen::VectorXd& score) {
    const int p = ds.coefficient_count();
    info = Eigen::MatrixXd::Zero(p, p);
    score = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& subject = ds.subject(i);
        const Eigen::VectorXd mu =
            evaluate_mean(m, subject.covariates, beta, subject.visit_indices);
        const Eigen::MatrixXd jac =
            evaluate_jacobian(m, subject.covariates, beta, subject.visit_indices);
        const Eigen::LLT<Eigen::MatrixXd> llt =
            cholesky_pd(V.matrix(i), "working covariance for subject '" +
                                         subject.subject_id + "'");
        const Eigen::MatrixXd vinv_jac = llt.solve(jac);
        const Eigen::VectorXd vinv_resid = llt.solve(subject.responses - mu);
        info.noalias() += jac.transpose() * vinv_jac;
        score.noalias() += jac.transpose() * vinv_resid;
    }
    info = ((info + info.transpose()) / 2.0).eval();
}

}  // namespace detail

/// Weighted least squares with the given covariances: the closed-form
/// root of the linear estimating equation,
///   beta = (sum_i X_i' V_i^{-1} X_i)^{-1} sum_i X_i' V_i^{-1} Y_i.
/// With the true covariances this is the best linear unbiased estimator.
[[nodiscard]] inline Eigen::VectorXd blue_linear(const LongitudinalDataset& ds,
                                                 const CovarianceSet& V) {
    detail::check_covariance_set(ds, V);
    const int p = ds.coefficient_count();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& subject = ds.subject(i);
        const Eigen::LLT<Eigen::MatrixXd> llt =
            cholesky_pd(V.matrix(i), "working covariance for subject '" +
                                         subject.subject_id + "'");
        const Eigen::MatrixXd vinv_x = llt.solve(subject.covariates);
        info.noalias() += subject.covariates.transpose() * vinv_x;
        rhs.noalias() += vinv_x.transpose() * subject.responses;
    }
    info = ((info + info.transpose()) / 2.0).eval();
    return solve_spd(info, rhs, "weighted least-squares normal equations");
}

/// Ordinary least squares: weighted least squares with identity
/// covariances, the natural starting estimator.
[[nodiscard]] inline Eigen::VectorXd ols_linear(const LongitudinalDataset& ds) {
    return blue_linear(ds, CovarianceSet::identity(ds));
}

/// Solves the estimating equation
///   sum_i J_i(beta)' V_i^{-1} (Y_i - mu_i(beta)) = 0
/// by Gauss-Newton/Fisher scoring: each update solves the accumulated
/// normal equations. Only first derivatives enter the update matrix, so
/// the system is symmetric positive semidefinite and linear models land
/// exactly in one step.
///
/// Throws NewtonSingular when the update system is singular and no ridge
/// is configured, NewtonDiverged when the iteration budget is exhausted;
/// both carry the last iterate.
[[nodiscard]] inline Eigen::VectorXd solve_gee(const LongitudinalDataset& ds,
                                               const MeanModel& m, const CovarianceSet& V,
                                               const Eigen::VectorXd& beta0,
                                               const GeeOptions& opts = {}) {
    detail::check_covariance_set(ds, V);
    if (opts.max_newton_iters < 1) throw ValidationError("max_newton_iters must be >= 1");
    if (!(opts.beta_tol > 0.0)) throw ValidationError("beta_tol must be > 0");
    if (beta0.size() != ds.coefficient_count()) {
        throw ValidationError("starting coefficient length " + std::to_string(beta0.size()) +
                              " does not match p = " + std::to_string(ds.coefficient_count()));
    }
    if (!all_finite(beta0)) throw ValidationError("starting coefficients are not finite");

    Eigen::VectorXd beta = beta0;
    Eigen::MatrixXd info;
    Eigen::VectorXd score;
    for (int iter = 0; iter < opts.max_newton_iters; ++iter) {
        detail::accumulate_normal_equations(ds, m, V, beta, info, score);
        Eigen::VectorXd delta;
        try {
            delta = solve_spd(info, score, "estimating-equation update system");
        } catch (const SingularInformation& err) {
            if (opts.ridge <= 0.0) throw NewtonSingular(err.what(), beta);
            Eigen::MatrixXd ridged = info;
            ridged.diagonal().array() += opts.ridge;
            delta = solve_spd(ridged, score, "ridged estimating-equation update system");
        }
        if (!all_finite(delta)) {
            throw NewtonSingular("estimating-equation update is not finite", beta);
        }
        beta += delta;
        if (delta.lpNorm<Eigen::Infinity>() < opts.beta_tol) return beta;
        if (m.is_linear() && iter == 0) {
            // The equation is linear in beta: the first update is exact and
            // a second pass would only add rounding noise.
            return beta;
        }
    }
    throw NewtonDiverged("estimating-equation solver did not converge within " +
                             std::to_string(opts.max_newton_iters) + " updates",
                         beta);
}

/// Value of the estimating function sum_i J_i' V_i^{-1} (Y_i - mu_i) at
/// beta; the max-abs norm of this vector measures how exactly the
/// equation is solved.
[[nodiscard]] inline Eigen::VectorXd estimating_function(const LongitudinalDataset& ds,
                                                         const MeanModel& m,
                                                         const CovarianceSet& V,
                                                         const Eigen::VectorXd& beta) {
    detail::check_covariance_set(ds, V);
    Eigen::MatrixXd info;
    Eigen::VectorXd score;
    detail::accumulate_normal_equations(ds, m, V, beta, info, score);
    return score;
}

/// Model-based covariance of the coefficient estimator,
///   (sum_i J_i' V_i^{-1} J_i)^{-1},
/// whose diagonal square roots are the reported standard errors.
[[nodiscard]] inline Eigen::MatrixXd model_based_covariance(const LongitudinalDataset& ds,
                                                            const MeanModel& m,
                                                            const Eigen::VectorXd& beta,
                                                            const CovarianceSet& V) {
    detail::check_covariance_set(ds, V);
    Eigen::MatrixXd info;
    Eigen::VectorXd score;
    detail::accumulate_normal_equations(ds, m, V, beta, info, score);
    return invert_spd(info, "coefficient information matrix");
}

}  // namespace iee
