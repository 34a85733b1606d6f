#pragma once

/// Umbrella header: the full library surface.
///
/// The library estimates regression coefficients from unbalanced
/// longitudinal data without assuming a parametric covariance structure,
/// by alternating two steps until a fixed point:
///   1. solve the weighted estimating equation for the coefficients,
///      using the current working covariance matrices;
///   2. re-estimate the distinct covariance values by averaging residual
///      cross-products over the subjects that share them.
/// Starting weights are identity matrices, so the first coefficient
/// estimate is ordinary least squares. A one-step variant stops after a
/// single reweighting. Seeded simulation designs and a Monte Carlo
/// harness support estimator comparisons against the exact
/// true-weight benchmark.

#include "iee/errors.hpp"
#include "iee/linalg.hpp"
#include "iee/dataset.hpp"
#include "iee/mean_model.hpp"
#include "iee/gee_solver.hpp"
#include "iee/covariance_mom.hpp"
#include "iee/iee_driver.hpp"
#include "iee/rng.hpp"
#include "iee/simulation.hpp"
#include "iee/io.hpp"
