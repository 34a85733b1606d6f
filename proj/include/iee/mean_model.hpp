#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "iee/errors.hpp"

namespace iee {

/// Numerically stable logistic function h(x) = e^x / (1 + e^x).
[[nodiscard]] inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Derivative of the logistic function, h'(x) = h(x)(1 - h(x)).
[[nodiscard]] inline double logistic_deriv(double x) {
    const double h = logistic(x);
    return h * (1.0 - h);
}

/// Gauss-Hermite quadrature rule (physicists' weight e^{-t^2}), built by
/// the Golub-Welsch eigendecomposition of the Jacobi matrix. Exposes
/// expectations against a standard normal:
///   E[f(xi)] = pi^{-1/2} * sum_q w_q f(sqrt(2) t_q),  xi ~ N(0, 1).
class GaussHermite {
public:
    explicit GaussHermite(int order) {
        if (order < 1) throw ValidationError("quadrature order must be >= 1");
        Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
        for (int k = 1; k < order; ++k) {
            const double off = std::sqrt(k / 2.0);
            jacobi(k, k - 1) = off;
            jacobi(k - 1, k) = off;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
        nodes_ = eig.eigenvalues();
        weights_.resize(order);
        const double sqrt_pi = std::sqrt(std::numbers::pi);
        for (int q = 0; q < order; ++q) {
            const double first = eig.eigenvectors()(0, q);
            weights_(q) = sqrt_pi * first * first;
        }
    }

    [[nodiscard]] const Eigen::VectorXd& nodes() const { return nodes_; }
    [[nodiscard]] const Eigen::VectorXd& weights() const { return weights_; }

    /// E[f(xi)] for xi standard normal.
    template <typename F>
    [[nodiscard]] double normal_expectation(F&& f) const {
        const double sqrt2 = std::sqrt(2.0);
        const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
        double acc = 0.0;
        for (int q = 0; q < nodes_.size(); ++q) {
            acc += weights_(q) * f(sqrt2 * nodes_(q));
        }
        return inv_sqrt_pi * acc;
    }

private:
    Eigen::VectorXd nodes_;
    Eigen::VectorXd weights_;
};

/// Mean value of a visit given its covariate row and the coefficients.
using MeanEvaluator = std::function<double(const Eigen::VectorXd& x_row,
                                           const Eigen::VectorXd& beta)>;
/// Gradient (length p) of a visit mean with respect to the coefficients.
using MeanGradient = std::function<Eigen::VectorXd(const Eigen::VectorXd& x_row,
                                                   const Eigen::VectorXd& beta)>;

/// The regression mean specification: how E(Y_ij | X_i) depends on the
/// covariates and coefficients, visit by visit. Immutable and reentrant.
///
/// Three kinds are supported:
///  - Linear:                  mu_ij = x_ij' beta.
///  - LogisticRandomIntercept: mu_ij = E[h(x_ij' beta + sigma * xi)] with
///    xi standard normal and h the logistic function; the expectation is
///    evaluated by Gauss-Hermite quadrature and differentiated under the
///    rule (sigma is a supplied constant, not an estimated parameter).
///  - Custom: one user-supplied evaluator per visit index, with optional
///    analytic gradients; missing gradients fall back to central finite
///    differences.
class MeanModel {
public:
    enum class Kind { Linear, LogisticRandomIntercept, Custom };

    [[nodiscard]] static MeanModel linear() { return MeanModel(Kind::Linear); }

    [[nodiscard]] static MeanModel logistic_random_intercept(double sigma,
                                                             int quadrature_order = 20) {
        if (!std::isfinite(sigma) || sigma < 0.0) {
            throw ValidationError("random-effect standard deviation must be finite and >= 0");
        }
        MeanModel m(Kind::LogisticRandomIntercept);
        m.sigma_ = sigma;
        m.quadrature_order_ = quadrature_order;
        m.quadrature_ = std::make_shared<GaussHermite>(quadrature_order);
        return m;
    }

    /// `means[j]` evaluates g_j; `gradients` may be empty (finite
    /// differences) or must supply every visit present in `means`.
    [[nodiscard]] static MeanModel custom(std::map<int, MeanEvaluator> means,
                                          std::map<int, MeanGradient> gradients = {}) {
        if (means.empty()) throw ValidationError("custom model has no visit evaluators");
        MeanModel m(Kind::Custom);
        m.custom_means_ = std::move(means);
        m.custom_gradients_ = std::move(gradients);
        return m;
    }

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] double sigma() const { return sigma_; }
    [[nodiscard]] int quadrature_order() const { return quadrature_order_; }

    /// True when the model is linear in beta, so a single weighted
    /// least-squares step solves the estimating equation exactly.
    [[nodiscard]] bool is_linear() const { return kind_ == Kind::Linear; }

    friend Eigen::VectorXd evaluate_mean(const MeanModel&, const Eigen::MatrixXd&,
                                         const Eigen::VectorXd&, const std::vector<int>&);
    friend Eigen::MatrixXd evaluate_jacobian(const MeanModel&, const Eigen::MatrixXd&,
                                             const Eigen::VectorXd&, const std::vector<int>&);

private:
    explicit MeanModel(Kind kind) : kind_(kind) {}

    [[nodiscard]] const MeanEvaluator& custom_mean(int visit) const {
        auto it = custom_means_.find(visit);
        if (it == custom_means_.end()) {
            throw ValidationError("custom model has no evaluator for visit " +
                                  std::to_string(visit));
        }
        return it->second;
    }

    Kind kind_;
    double sigma_ = 0.0;
    int quadrature_order_ = 0;
    std::shared_ptr<const GaussHermite> quadrature_;
    std::map<int, MeanEvaluator> custom_means_;
    std::map<int, MeanGradient> custom_gradients_;
};

/// Relative central-difference step for one coefficient: the standard
/// second-order choice eps^(1/3) * max(1, |value|).
[[nodiscard]] inline double finite_difference_step(double value) {
    const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
    return cbrt_eps * std::max(1.0, std::abs(value));
}

/// Evaluates the mean vector mu_i = (g_j(X_i, beta))_{j in J_i}.
/// `visits` lists the subject's visit indices, one per row of X_i.
[[nodiscard]] inline Eigen::VectorXd evaluate_mean(const MeanModel& m,
                                                   const Eigen::MatrixXd& X_i,
                                                   const Eigen::VectorXd& beta,
                                                   const std::vector<int>& visits) {
    if (X_i.cols() != beta.size()) {
        throw ValidationError("coefficient length " + std::to_string(beta.size()) +
                              " does not match covariate columns " +
                              std::to_string(X_i.cols()));
    }
    if (static_cast<size_t>(X_i.rows()) != visits.size()) {
        throw ValidationError("visit list length does not match covariate rows");
    }
    Eigen::VectorXd mu(X_i.rows());
    switch (m.kind()) {
        case MeanModel::Kind::Linear:
            mu = X_i * beta;
            break;
        case MeanModel::Kind::LogisticRandomIntercept: {
            const Eigen::VectorXd eta = X_i * beta;
            for (int q = 0; q < eta.size(); ++q) {
                if (m.sigma_ == 0.0) {
                    mu(q) = logistic(eta(q));
                } else {
                    mu(q) = m.quadrature_->normal_expectation(
                        [&](double xi) { return logistic(eta(q) + m.sigma_ * xi); });
                }
            }
            break;
        }
        case MeanModel::Kind::Custom:
            for (size_t q = 0; q < visits.size(); ++q) {
                mu(static_cast<int>(q)) =
                    m.custom_mean(visits[q])(X_i.row(static_cast<int>(q)), beta);
            }
            break;
    }
    if (!mu.allFinite()) throw NonFiniteValue("mean evaluation produced a non-finite value");
    return mu;
}

/// Evaluates the |J_i| x p Jacobian of the mean vector with respect to
/// beta. Linear models return X_i itself; the logistic random-intercept
/// model differentiates under the quadrature rule (h' = h(1-h)); custom
/// models use their registered gradients or symmetric finite differences
/// of evaluate_mean.
[[nodiscard]] inline Eigen::MatrixXd evaluate_jacobian(const MeanModel& m,
                                                       const Eigen::MatrixXd& X_i,
                                                       const Eigen::VectorXd& beta,
                                                       const std::vector<int>& visits) {
    if (X_i.cols() != beta.size()) {
        throw ValidationError("coefficient length " + std::to_string(beta.size()) +
                              " does not match covariate columns " +
                              std::to_string(X_i.cols()));
    }
    switch (m.kind()) {
        case MeanModel::Kind::Linear:
            return X_i;
        case MeanModel::Kind::LogisticRandomIntercept: {
            const Eigen::VectorXd eta = X_i * beta;
            Eigen::MatrixXd jac(X_i.rows(), X_i.cols());
            for (int q = 0; q < eta.size(); ++q) {
                double slope;
                if (m.sigma_ == 0.0) {
                    slope = logistic_deriv(eta(q));
                } else {
                    slope = m.quadrature_->normal_expectation(
                        [&](double xi) { return logistic_deriv(eta(q) + m.sigma_ * xi); });
                }
                jac.row(q) = slope * X_i.row(q);
            }
            if (!jac.allFinite()) {
                throw NonFiniteValue("jacobian evaluation produced a non-finite value");
            }
            return jac;
        }
        case MeanModel::Kind::Custom: {
            const int rows = static_cast<int>(visits.size());
            const int p = static_cast<int>(beta.size());
            Eigen::MatrixXd jac(rows, p);
            bool all_analytic = !m.custom_gradients_.empty();
            if (all_analytic) {
                for (int q = 0; q < rows; ++q) {
                    auto it = m.custom_gradients_.find(visits[static_cast<size_t>(q)]);
                    if (it == m.custom_gradients_.end()) {
                        throw ValidationError("custom model has no gradient for visit " +
                                              std::to_string(visits[static_cast<size_t>(q)]));
                    }
                    jac.row(q) = it->second(X_i.row(q), beta).transpose();
                }
            } else {
                for (int l = 0; l < p; ++l) {
                    const double h = finite_difference_step(beta(l));
                    Eigen::VectorXd hi = beta, lo = beta;
                    hi(l) += h;
                    lo(l) -= h;
                    const Eigen::VectorXd up = evaluate_mean(m, X_i, hi, visits);
                    const Eigen::VectorXd down = evaluate_mean(m, X_i, lo, visits);
                    jac.col(l) = (up - down) / (hi(l) - lo(l));
                }
            }
            if (!jac.allFinite()) {
                throw NonFiniteValue("jacobian evaluation produced a non-finite value");
            }
            return jac;
        }
    }
    throw ValidationError("unknown mean model kind");
}

}  // namespace iee
