#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "iee/errors.hpp"

namespace iee {

/// Solves A x = b for a symmetric positive (semi)definite A via a robust
/// LDLT factorization. Throws SingularInformation when the pivot spread
/// indicates rank deficiency.
[[nodiscard]] inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A,
                                               const Eigen::VectorXd& b,
                                               const std::string& context) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) {
        throw SingularInformation(context + ": factorization failed");
    }
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    const double dmin = d.minCoeff();
    // Negative or vanishing pivots mean the quadratic form lost rank.
    if (!(dmax > 0.0) || dmin <= dmax * 1e-13 * static_cast<double>(A.rows())) {
        throw SingularInformation(context + ": matrix is singular or indefinite");
    }
    return ldlt.solve(b);
}

/// Inverse of a symmetric positive-definite matrix, exactly symmetrized.
[[nodiscard]] inline Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& A,
                                                const std::string& context) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) {
        throw SingularInformation(context + ": factorization failed");
    }
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    const double dmin = d.minCoeff();
    if (!(dmax > 0.0) || dmin <= dmax * 1e-13 * static_cast<double>(A.rows())) {
        throw SingularInformation(context + ": matrix is singular or indefinite");
    }
    Eigen::MatrixXd inv =
        ldlt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    inv = ((inv + inv.transpose()) * 0.5).eval();
    return inv;
}

/// Cholesky factor of a per-subject covariance matrix. Failure means the
/// matrix is not positive definite.
[[nodiscard]] inline Eigen::LLT<Eigen::MatrixXd> cholesky_pd(
    const Eigen::MatrixXd& V, const std::string& context) {
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) {
        throw IndefiniteCovariance(context + ": matrix is not positive definite");
    }
    return llt;
}

[[nodiscard]] inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    return m.allFinite();
}

}  // namespace iee
