#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "iee/iee.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using test_helpers::make_dataset;
using test_helpers::random_covariance_set;
using test_helpers::random_dataset;

namespace {

/// Independent reference: stack every subject into one design matrix and
/// one block-diagonal weight matrix and solve the dense normal equations
/// in a single shot. Exercises none of the per-subject accumulation code.
Eigen::VectorXd stacked_wls(const iee::LongitudinalDataset& ds, const iee::CovarianceSet& V) {
    const int n_obs = ds.total_observations();
    const int p = ds.coefficient_count();
    Eigen::MatrixXd X(n_obs, p);
    Eigen::VectorXd Y(n_obs);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n_obs, n_obs);
    int at = 0;
    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& subject = ds.subject(i);
        const int m = subject.n_visits();
        X.block(at, 0, m, p) = subject.covariates;
        Y.segment(at, m) = subject.responses;
        W.block(at, at, m, m) = V.matrix(i).inverse();
        at += m;
    }
    return (X.transpose() * W * X).ldlt().solve(X.transpose() * W * Y);
}

}  // namespace

TEST_CASE("weighted least squares on one scalar observation returns it") {
    const auto ds = make_dataset({{"A", 1, 3.25, {1.0}}});
    iee::CovarianceSet V;
    V.matrices.push_back(Eigen::MatrixXd::Constant(1, 1, 7.0));
    const Eigen::VectorXd beta = iee::blue_linear(ds, V);
    REQUIRE(beta.size() == 1);
    CHECK_THAT(beta(0), WithinAbs(3.25, 1e-15));
}

TEST_CASE("weighted least squares matches a hand-inverted two-subject system") {
    // Subject A: two visits with covariance [[2, .5], [.5, 1]];
    // subject B: one visit with variance 4. Solving the 2x2 normal
    // equations by cofactor inversion gives beta = (14/15, 7/10) and
    // coefficient covariance [[71/60, -11/20], [-11/20, 13/20]].
    const auto ds = make_dataset({{"A", 1, 1.0, {1.0, 0.5}},
                                  {"A", 2, 2.0, {1.0, 1.5}},
                                  {"B", 1, 0.5, {1.0, -1.0}}});
    iee::CovarianceSet V;
    Eigen::MatrixXd VA(2, 2);
    VA << 2.0, 0.5, 0.5, 1.0;
    V.matrices.push_back(VA);
    V.matrices.push_back(Eigen::MatrixXd::Constant(1, 1, 4.0));

    const Eigen::VectorXd beta = iee::blue_linear(ds, V);
    CHECK_THAT(beta(0), WithinAbs(14.0 / 15.0, 1e-12));
    CHECK_THAT(beta(1), WithinAbs(7.0 / 10.0, 1e-12));

    const Eigen::MatrixXd cov =
        iee::model_based_covariance(ds, iee::MeanModel::linear(), beta, V);
    CHECK_THAT(cov(0, 0), WithinAbs(71.0 / 60.0, 1e-12));
    CHECK_THAT(cov(0, 1), WithinAbs(-11.0 / 20.0, 1e-12));
    CHECK_THAT(cov(1, 0), WithinAbs(-11.0 / 20.0, 1e-12));
    CHECK_THAT(cov(1, 1), WithinAbs(13.0 / 20.0, 1e-12));
}

TEST_CASE("ordinary least squares is weighted least squares with identity weights") {
    std::mt19937_64 rng(11u);
    const auto ds = random_dataset(rng, 25, 4, 3);
    const Eigen::VectorXd a = iee::ols_linear(ds);
    const Eigen::VectorXd b = iee::blue_linear(ds, iee::CovarianceSet::identity(ds));
    CHECK((a - b).norm() == 0.0);
}

TEST_CASE("intercept-only least squares recovers the grand mean") {
    const auto ds = make_dataset({{"A", 1, 1.0, {1.0}},
                                  {"A", 2, 2.0, {1.0}},
                                  {"B", 1, 3.0, {1.0}},
                                  {"C", 2, 6.0, {1.0}}});
    const Eigen::VectorXd beta = iee::ols_linear(ds);
    CHECK_THAT(beta(0), WithinAbs(3.0, 1e-14));
}

TEST_CASE("weighted least squares agrees with the stacked dense solve") {
    std::mt19937_64 rng(501u);
    for (int trial = 0; trial < 15; ++trial) {
        const auto ds = random_dataset(rng, 20, 5, 3);
        const auto V = random_covariance_set(rng, ds);
        const Eigen::VectorXd fast = iee::blue_linear(ds, V);
        const Eigen::VectorXd dense = stacked_wls(ds, V);
        CHECK((fast - dense).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("weighted least squares is invariant to rescaling all weights") {
    std::mt19937_64 rng(502u);
    const auto ds = random_dataset(rng, 20, 4, 2);
    auto V = random_covariance_set(rng, ds);
    const Eigen::VectorXd base = iee::blue_linear(ds, V);
    for (double c : {0.01, 3.0, 250.0}) {
        iee::CovarianceSet scaled = V;
        for (auto& M : scaled.matrices) M *= c;
        const Eigen::VectorXd rescaled = iee::blue_linear(ds, scaled);
        CHECK((base - rescaled).lpNorm<Eigen::Infinity>() < 1e-11);
    }
}

TEST_CASE("scaling the responses scales the coefficients") {
    std::mt19937_64 rng(503u);
    const auto ds = random_dataset(rng, 15, 4, 2);
    const auto V = random_covariance_set(rng, ds);
    const Eigen::VectorXd base = iee::blue_linear(ds, V);
    const Eigen::VectorXd doubled = iee::blue_linear(ds.with_scaled_responses(2.0), V);
    CHECK((doubled - 2.0 * base).lpNorm<Eigen::Infinity>() < 1e-11);
}

TEST_CASE("the iterative solver lands on the closed form for linear models") {
    std::mt19937_64 rng(504u);
    for (int trial = 0; trial < 10; ++trial) {
        const auto ds = random_dataset(rng, 20, 4, 3);
        const auto V = random_covariance_set(rng, ds);
        const Eigen::VectorXd closed = iee::blue_linear(ds, V);
        const Eigen::VectorXd iterated =
            iee::solve_gee(ds, iee::MeanModel::linear(), V, Eigen::VectorXd::Zero(3));
        CHECK((closed - iterated).lpNorm<Eigen::Infinity>() < 1e-12);

        // Linearity means one update is exact from any start, not just zero.
        Eigen::VectorXd far(3);
        far << 100.0, -40.0, 12.5;
        const Eigen::VectorXd from_far = iee::solve_gee(ds, iee::MeanModel::linear(), V, far);
        CHECK((closed - from_far).lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("the estimating function vanishes at the solution") {
    std::mt19937_64 rng(505u);
    const auto ds = random_dataset(rng, 25, 4, 3);
    const auto V = random_covariance_set(rng, ds);
    const iee::MeanModel m = iee::MeanModel::linear();
    const Eigen::VectorXd beta = iee::solve_gee(ds, m, V, Eigen::VectorXd::Zero(3));
    CHECK(iee::estimating_function(ds, m, V, beta).lpNorm<Eigen::Infinity>() < 1e-9);

    // Away from the solution it does not vanish.
    Eigen::VectorXd off = beta;
    off(0) += 1.0;
    CHECK(iee::estimating_function(ds, m, V, off).lpNorm<Eigen::Infinity>() > 1e-3);
}

TEST_CASE("the solver roots a nonlinear mean with noisy responses") {
    // Responses are random-intercept logistic means plus small noise; the
    // solver starts at zero and must drive the estimating function to its
    // root far more tightly than the noise scale.
    std::mt19937_64 rng(506u);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd beta_true(2);
    beta_true << 0.3, 0.8;
    const iee::MeanModel m = iee::MeanModel::logistic_random_intercept(1.0);

    std::vector<iee::ObservationRow> rows;
    for (int i = 0; i < 200; ++i) {
        for (int j = 1; j <= 3; ++j) {
            iee::ObservationRow row;
            row.subject_id = "S" + std::to_string(i + 1);
            row.visit = j;
            const double x = gauss(rng);
            Eigen::MatrixXd X(1, 2);
            X << 1.0, x;
            const Eigen::VectorXd mu = iee::evaluate_mean(m, X, beta_true, {j});
            row.response = mu(0) + 0.05 * gauss(rng);
            row.covariates = {1.0, x};
            rows.push_back(std::move(row));
        }
    }
    const auto ds = iee::build_dataset(rows);
    const auto V = iee::CovarianceSet::identity(ds);

    const Eigen::VectorXd beta = iee::solve_gee(ds, m, V, Eigen::VectorXd::Zero(2));
    CHECK(iee::estimating_function(ds, m, V, beta).lpNorm<Eigen::Infinity>() < 1e-8);
    // With 600 observations of sd 0.05 noise the fit should sit close to
    // the generating coefficients.
    CHECK((beta - beta_true).lpNorm<Eigen::Infinity>() < 0.1);
}

TEST_CASE("model-based covariance with identity weights inverts the cross-product") {
    std::mt19937_64 rng(507u);
    const auto ds = random_dataset(rng, 30, 4, 3);
    const auto V = iee::CovarianceSet::identity(ds);
    const Eigen::VectorXd beta = iee::ols_linear(ds);
    const Eigen::MatrixXd cov =
        iee::model_based_covariance(ds, iee::MeanModel::linear(), beta, V);

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(3, 3);
    for (const auto& subject : ds.subjects()) {
        xtx += subject.covariates.transpose() * subject.covariates;
    }
    CHECK((cov * xtx - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);

    // Symmetric and positive definite.
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("a redundant covariate column is reported as singular") {
    // The second column is an exact copy of the intercept, so the normal
    // equations have no unique solution.
    const auto ds = make_dataset({{"A", 1, 1.0, {1.0, 1.0}},
                                  {"A", 2, 2.0, {1.0, 1.0}},
                                  {"B", 1, 3.0, {1.0, 1.0}}});
    const auto V = iee::CovarianceSet::identity(ds);

    CHECK_THROWS_AS(iee::blue_linear(ds, V), iee::SingularInformation);

    try {
        (void)iee::solve_gee(ds, iee::MeanModel::linear(), V, Eigen::VectorXd::Zero(2));
        FAIL("expected NewtonSingular");
    } catch (const iee::NewtonSingular& err) {
        CHECK(err.last_iterate.size() == 2);
        CHECK((err.last_iterate - Eigen::VectorXd::Zero(2)).norm() == 0.0);
    }

    // A configured ridge turns the same system into a solvable one.
    iee::GeeOptions opts;
    opts.ridge = 1e-6;
    const Eigen::VectorXd beta =
        iee::solve_gee(ds, iee::MeanModel::linear(), V, Eigen::VectorXd::Zero(2), opts);
    CHECK(beta.allFinite());
}

TEST_CASE("an exhausted update budget reports divergence with the last iterate") {
    std::mt19937_64 rng(508u);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<iee::ObservationRow> rows;
    for (int i = 0; i < 20; ++i) {
        iee::ObservationRow row;
        row.subject_id = "S" + std::to_string(i + 1);
        row.visit = 1;
        const double x = gauss(rng);
        row.response = iee::logistic(0.5 + x) + 0.1 * gauss(rng);
        row.covariates = {1.0, x};
        rows.push_back(std::move(row));
    }
    const auto ds = iee::build_dataset(rows);
    const auto V = iee::CovarianceSet::identity(ds);
    const iee::MeanModel m = iee::MeanModel::logistic_random_intercept(0.0);

    iee::GeeOptions opts;
    opts.max_newton_iters = 1;
    Eigen::VectorXd start(2);
    start << 5.0, -5.0;
    try {
        (void)iee::solve_gee(ds, m, V, start, opts);
        FAIL("expected NewtonDiverged");
    } catch (const iee::NewtonDiverged& err) {
        CHECK(err.last_iterate.size() == 2);
        CHECK(err.last_iterate.allFinite());
        CHECK_THAT(err.what(), ContainsSubstring("1"));
    }
}

TEST_CASE("covariance sets are validated against the dataset") {
    const auto ds = make_dataset({{"A", 1, 1.0, {1.0}}, {"A", 2, 2.0, {1.0}}});

    iee::CovarianceSet too_few;
    CHECK_THROWS_MATCHES(iee::blue_linear(ds, too_few), iee::ValidationError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("0 matrices")));

    iee::CovarianceSet wrong_dim;
    wrong_dim.matrices.push_back(Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_MATCHES(iee::blue_linear(ds, wrong_dim), iee::ValidationError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("'A'")));

    iee::CovarianceSet indefinite;
    Eigen::MatrixXd M(2, 2);
    M << 1.0, 2.0, 2.0, 1.0;
    indefinite.matrices.push_back(M);
    CHECK_THROWS_AS(iee::blue_linear(ds, indefinite), iee::IndefiniteCovariance);
}

TEST_CASE("solver options are validated") {
    const auto ds = make_dataset({{"A", 1, 1.0, {1.0}}});
    const auto V = iee::CovarianceSet::identity(ds);
    const iee::MeanModel m = iee::MeanModel::linear();

    iee::GeeOptions bad_iters;
    bad_iters.max_newton_iters = 0;
    CHECK_THROWS_AS(iee::solve_gee(ds, m, V, Eigen::VectorXd::Zero(1), bad_iters),
                    iee::ValidationError);

    iee::GeeOptions bad_tol;
    bad_tol.beta_tol = 0.0;
    CHECK_THROWS_AS(iee::solve_gee(ds, m, V, Eigen::VectorXd::Zero(1), bad_tol),
                    iee::ValidationError);

    CHECK_THROWS_AS(iee::solve_gee(ds, m, V, Eigen::VectorXd::Zero(2)), iee::ValidationError);
    Eigen::VectorXd nan_start = Eigen::VectorXd::Constant(1, std::nan(""));
    CHECK_THROWS_AS(iee::solve_gee(ds, m, V, nan_start), iee::ValidationError);
}
