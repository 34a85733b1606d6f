#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace iee {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input data or configuration (bad CSV row, inconsistent
/// dimensions, invalid option values). Messages carry the offending
/// location where one is known.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A subject requires a covariance-class entry (j, k, l) that the
/// grouping does not provide.
class MissingGroup : public Error {
public:
    using Error::Error;
};

/// An assembled covariance matrix has an eigenvalue below the active
/// floor and the repair policy forbids clipping.
class IndefiniteCovariance : public Error {
public:
    using Error::Error;
};

/// The accumulated information matrix cannot be solved.
class SingularInformation : public Error {
public:
    using Error::Error;
};

/// A numerical evaluation produced NaN or infinity (overflow in a
/// user-supplied mean function, degenerate arithmetic).
class NonFiniteValue : public Error {
public:
    using Error::Error;
};

/// The Gauss-Newton system became singular with no ridge configured.
/// Carries the last iterate.
class NewtonSingular : public Error {
public:
    NewtonSingular(const std::string& what, Eigen::VectorXd last)
        : Error(what), last_iterate(std::move(last)) {}
    Eigen::VectorXd last_iterate;
};

/// The inner Gauss-Newton loop exhausted its iteration budget.
/// Carries the last iterate.
class NewtonDiverged : public Error {
public:
    NewtonDiverged(const std::string& what, Eigen::VectorXd last)
        : Error(what), last_iterate(std::move(last)) {}
    Eigen::VectorXd last_iterate;
};

/// The dataset does not satisfy the disjoint-visit-set hypothesis
/// required by the matrix-wise moment estimator.
class NoPartition : public Error {
public:
    using Error::Error;
};

/// A solver or moment-estimation error surfaced during the outer
/// fixed-point iteration; `iteration` is the outer step at which it
/// occurred.
class FitIterationError : public Error {
public:
    FitIterationError(int iteration_, const std::string& what)
        : Error("outer iteration " + std::to_string(iteration_) + ": " + what),
          iteration(iteration_) {}
    int iteration;
};

/// A serialized document does not match the expected schema. The
/// message names the offending field.
class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace iee
