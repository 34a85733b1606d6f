#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "iee/iee.hpp"

using Catch::Matchers::WithinAbs;

namespace {

/// Residuals against the true coefficients, one value per (subject,
/// position) pair, gathered per visit position for moment checks.
std::vector<double> residuals_at_position(const iee::LongitudinalDataset& ds,
                                          const Eigen::VectorXd& beta_true, int position) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(ds.subject_count()));
    for (const auto& subject : ds.subjects()) {
        if (subject.n_visits() <= position) continue;
        const double mean = subject.covariates.row(position).dot(beta_true);
        out.push_back(subject.responses(position) - mean);
    }
    return out;
}

double sample_mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_central_moment(const std::vector<double>& xs, int order) {
    const double m = sample_mean(xs);
    double s = 0.0;
    for (double x : xs) s += std::pow(x - m, order);
    return s / static_cast<double>(xs.size());
}

double sample_cross_moment(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    const double ma = sample_mean(a), mb = sample_mean(b);
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("seed streams are deterministic and independent") {
    auto a = iee::make_engine(42, 3, "noise");
    auto b = iee::make_engine(42, 3, "noise");
    CHECK(a() == b());
    CHECK(a() == b());

    auto c = iee::make_engine(42, 4, "noise");
    auto d = iee::make_engine(42, 3, "covariates");
    auto e = iee::make_engine(43, 3, "noise");
    CHECK(iee::child_seed(42, 3, "noise") != iee::child_seed(42, 4, "noise"));
    CHECK(iee::child_seed(42, 3, "noise") != iee::child_seed(42, 3, "covariates"));
    CHECK(iee::child_seed(42, 3, "noise") != iee::child_seed(43, 3, "noise"));
    (void)c;
    (void)d;
    (void)e;
}

TEST_CASE("generation is reproducible and covariates are shared across replications") {
    iee::ScenarioSpec spec;
    spec.n = 20;
    spec.seed = 7;

    const auto [ds_a, v_a] = iee::generate(spec, 5);
    const auto [ds_b, v_b] = iee::generate(spec, 5);
    REQUIRE(ds_a.subject_count() == ds_b.subject_count());
    for (int i = 0; i < ds_a.subject_count(); ++i) {
        CHECK((ds_a.subject(i).responses - ds_b.subject(i).responses).norm() == 0.0);
        CHECK((ds_a.subject(i).covariates - ds_b.subject(i).covariates).norm() == 0.0);
        CHECK((v_a.matrix(i) - v_b.matrix(i)).norm() == 0.0);
    }

    // A different replication redraws the noise but keeps the design.
    const auto [ds_c, v_c] = iee::generate(spec, 6);
    bool any_response_changed = false;
    for (int i = 0; i < ds_a.subject_count(); ++i) {
        CHECK((ds_a.subject(i).covariates - ds_c.subject(i).covariates).norm() == 0.0);
        if ((ds_a.subject(i).responses - ds_c.subject(i).responses).norm() > 0.0) {
            any_response_changed = true;
        }
    }
    CHECK(any_response_changed);

    // A different master seed changes the design too.
    iee::ScenarioSpec other = spec;
    other.seed = 8;
    const auto [ds_d, v_d] = iee::generate(other, 5);
    bool any_covariate_changed = false;
    for (int i = 0; i < ds_a.subject_count(); ++i) {
        if ((ds_a.subject(i).covariates - ds_d.subject(i).covariates).norm() > 0.0) {
            any_covariate_changed = true;
        }
    }
    CHECK(any_covariate_changed);
}

TEST_CASE("the split design places subjects on the expected visit sets") {
    iee::ScenarioSpec spec;
    spec.n = 10;
    spec.fraction_135 = 0.4;
    const auto [ds, true_v] = iee::generate(spec);

    REQUIRE(ds.subject_count() == 10);
    CHECK(ds.visit_count() == 5);
    CHECK(ds.coefficient_count() == 2);
    for (int i = 0; i < 4; ++i) {
        CHECK(ds.subject(i).visit_indices == std::vector<int>{1, 3, 5});
    }
    for (int i = 4; i < 10; ++i) {
        CHECK(ds.subject(i).visit_indices == std::vector<int>{2, 4});
    }
    CHECK(ds.subject(0).subject_id == "S1");
    CHECK(ds.subject(9).subject_id == "S10");
}

TEST_CASE("the true covariance carries the variance components") {
    // Defaults: sigma_u2 = 1, sigma_w2 = 9 with AR(1) phi = 0.9,
    // sigma_e2 = 1, so the diagonal is 11, lag 2 gives 1 + 9 * 0.81 = 8.29
    // and lag 4 gives 1 + 9 * 0.9^4 = 6.9049.
    iee::ScenarioSpec spec;
    spec.n = 10;
    const auto [ds, true_v] = iee::generate(spec);

    const auto& v135 = true_v.matrix(0);  // visits {1, 3, 5}
    CHECK_THAT(v135(0, 0), WithinAbs(11.0, 1e-12));
    CHECK_THAT(v135(1, 1), WithinAbs(11.0, 1e-12));
    CHECK_THAT(v135(0, 1), WithinAbs(8.29, 1e-12));
    CHECK_THAT(v135(1, 2), WithinAbs(8.29, 1e-12));
    CHECK_THAT(v135(0, 2), WithinAbs(6.9049, 1e-12));

    const auto& v24 = true_v.matrix(9);  // visits {2, 4}
    CHECK_THAT(v24(0, 0), WithinAbs(11.0, 1e-12));
    CHECK_THAT(v24(0, 1), WithinAbs(8.29, 1e-12));

    // Under an MA(1) process only lag 1 correlates, and the split design
    // has no lag-1 pairs: every off-diagonal reduces to sigma_u2.
    iee::ScenarioSpec ma = spec;
    ma.process = iee::ScenarioSpec::SerialProcess::Ma1;
    const auto [ds_ma, v_ma] = iee::generate(ma);
    CHECK_THAT(v_ma.matrix(0)(0, 0), WithinAbs(11.0, 1e-12));
    CHECK_THAT(v_ma.matrix(0)(0, 1), WithinAbs(1.0, 1e-12));
    CHECK_THAT(v_ma.matrix(0)(0, 2), WithinAbs(1.0, 1e-12));
    CHECK_THAT(ma.serial_correlation(1), WithinAbs(0.5, 1e-15));
}

TEST_CASE("zero noise reproduces the regression line exactly") {
    iee::ScenarioSpec spec;
    spec.n = 15;
    spec.sigma_u2 = 0.0;
    spec.sigma_w2 = 0.0;
    spec.sigma_e2 = 0.0;
    const auto [ds, true_v] = iee::generate(spec);

    for (const auto& subject : ds.subjects()) {
        const Eigen::VectorXd mean = subject.covariates * spec.beta_true;
        CHECK((subject.responses - mean).norm() == 0.0);
    }
    for (const auto& V : true_v.matrices) {
        CHECK(V.cwiseAbs().maxCoeff() == 0.0);
    }

    // With no serial variance the AR(1) and MA(1) paths consume the same
    // number of draws, so the generated data agree bit for bit.
    iee::ScenarioSpec ar = spec, ma = spec;
    ar.sigma_u2 = ma.sigma_u2 = 1.0;
    ar.sigma_e2 = ma.sigma_e2 = 1.0;
    ma.process = iee::ScenarioSpec::SerialProcess::Ma1;
    const auto [ds_ar, v_ar] = iee::generate(ar, 3);
    const auto [ds_ma, v_ma] = iee::generate(ma, 3);
    for (int i = 0; i < ds_ar.subject_count(); ++i) {
        CHECK((ds_ar.subject(i).responses - ds_ma.subject(i).responses).norm() == 0.0);
    }
}

TEST_CASE("simulated noise moments match the declared covariance") {
    // One large replication; every {1,3,5} subject contributes a residual
    // triple. Sample moments must sit within Monte Carlo error of the
    // declared entries (tolerances are a little over four standard
    // errors of the corresponding sample moment).
    iee::ScenarioSpec spec;
    spec.n = 4000;
    spec.fraction_135 = 1.0;
    const auto [ds, true_v] = iee::generate(spec);

    const auto r1 = residuals_at_position(ds, spec.beta_true, 0);
    const auto r3 = residuals_at_position(ds, spec.beta_true, 1);
    const auto r5 = residuals_at_position(ds, spec.beta_true, 2);
    REQUIRE(r1.size() == 4000);

    CHECK_THAT(sample_mean(r1), WithinAbs(0.0, 0.25));
    CHECK_THAT(sample_central_moment(r1, 2), WithinAbs(11.0, 1.0));
    CHECK_THAT(sample_central_moment(r3, 2), WithinAbs(11.0, 1.0));
    CHECK_THAT(sample_cross_moment(r1, r3), WithinAbs(8.29, 0.9));
    CHECK_THAT(sample_cross_moment(r3, r5), WithinAbs(8.29, 0.9));
    CHECK_THAT(sample_cross_moment(r1, r5), WithinAbs(6.9049, 0.85));

    // Same design under MA(1): the lag-2 cross moment collapses to the
    // shared subject-effect variance.
    iee::ScenarioSpec ma = spec;
    ma.process = iee::ScenarioSpec::SerialProcess::Ma1;
    const auto [ds_ma, v_ma] = iee::generate(ma);
    const auto q1 = residuals_at_position(ds_ma, spec.beta_true, 0);
    const auto q3 = residuals_at_position(ds_ma, spec.beta_true, 1);
    CHECK_THAT(sample_central_moment(q1, 2), WithinAbs(11.0, 1.0));
    CHECK_THAT(sample_cross_moment(q1, q3), WithinAbs(1.0, 0.75));
}

TEST_CASE("the centered exponential subject effect is skewed with the right variance") {
    iee::ScenarioSpec spec;
    spec.n = 4000;
    spec.fraction_135 = 1.0;
    spec.random_effect = iee::ScenarioSpec::RandomEffect::CenteredExponential;
    spec.sigma_u2 = 9.0;
    spec.sigma_w2 = 0.0;
    spec.sigma_e2 = 0.0;
    const auto [ds, true_v] = iee::generate(spec);

    // With only the subject effect active, each residual IS u_i.
    const auto u = residuals_at_position(ds, spec.beta_true, 0);
    CHECK_THAT(sample_mean(u), WithinAbs(0.0, 0.2));
    CHECK_THAT(sample_central_moment(u, 2), WithinAbs(9.0, 0.6));
    // Third central moment of sigma_u * (Exp(1) - 1) is 2 * sigma_u^3 = 54.
    CHECK_THAT(sample_central_moment(u, 3), WithinAbs(54.0, 25.0));

    // The residual is constant across a subject's visits.
    for (const auto& subject : ds.subjects()) {
        const Eigen::VectorXd r = subject.responses - subject.covariates * spec.beta_true;
        CHECK_THAT(r(0), WithinAbs(r(1), 1e-12));
        CHECK_THAT(r(0), WithinAbs(r(2), 1e-12));
    }
}

TEST_CASE("the two-visit heteroscedastic design fixes the covariate over time") {
    iee::ScenarioSpec spec;
    spec.design = iee::ScenarioSpec::Design::HeteroTwoVisit;
    spec.beta_true << 0.2, 0.1;
    spec.n = 200;
    const auto [ds, true_v] = iee::generate(spec);

    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& subject = ds.subject(i);
        REQUIRE(subject.visit_indices == std::vector<int>{1, 2});
        CHECK(subject.covariates(0, 1) == subject.covariates(1, 1));
        CHECK(subject.covariates(0, 1) >= 0.0);
        CHECK(subject.covariates(0, 1) <= 1.0);
        CHECK((true_v.matrix(i) -
               Eigen::Vector2d(1.0, 16.0).asDiagonal().toDenseMatrix())
                  .norm() == 0.0);
    }

    // Visit-2 noise is sixteen times as variable as visit-1 noise.
    const auto e1 = residuals_at_position(ds, spec.beta_true, 0);
    const auto e2 = residuals_at_position(ds, spec.beta_true, 1);
    CHECK(sample_central_moment(e2, 2) > 4.0 * sample_central_moment(e1, 2));
}

TEST_CASE("the benchmark covariance equals the model-based covariance at the truth") {
    iee::ScenarioSpec spec;
    spec.n = 60;
    const auto [ds, true_v] = iee::generate(spec);
    const Eigen::MatrixXd bench = iee::exact_blue_covariance(ds, true_v);
    const Eigen::MatrixXd model = iee::model_based_covariance(
        ds, iee::MeanModel::linear(), spec.beta_true, true_v);
    CHECK((bench - model).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(bench);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("a zero-noise comparison recovers the coefficients exactly for all estimators") {
    iee::ScenarioSpec spec;
    spec.n = 12;
    spec.sigma_u2 = 0.0;
    spec.sigma_w2 = 0.0;
    spec.sigma_e2 = 0.0;
    const auto summary = iee::monte_carlo(
        spec, 3, {iee::Estimator::Ols, iee::Estimator::OneStep, iee::Estimator::Irls});

    CHECK(summary.n_rep == 3);
    CHECK(summary.n_failed == 0);
    CHECK(summary.n_not_converged == 0);
    REQUIRE(summary.estimators.size() == 3);
    for (const auto& [which, es] : summary.estimators) {
        CHECK(es.runs_used == 3);
        CHECK((es.mean - spec.beta_true).lpNorm<Eigen::Infinity>() < 1e-9);
        CHECK(es.covariance.cwiseAbs().maxCoeff() < 1e-18);
    }
    // Exact data converge at the first measurable step.
    REQUIRE(summary.step_histogram.size() == 1);
    CHECK(summary.step_histogram.begin()->first == 2);
    CHECK(summary.step_histogram.begin()->second == 3);
}

TEST_CASE("a short comparison shows the alternation beating identity weights") {
    iee::ScenarioSpec spec;
    spec.n = 50;
    spec.seed = 11;
    const auto summary = iee::monte_carlo(
        spec, 60, {iee::Estimator::Ols, iee::Estimator::Irls});

    CHECK(summary.n_failed == 0);
    const auto& ols = summary.estimators.at(iee::Estimator::Ols);
    const auto& irls = summary.estimators.at(iee::Estimator::Irls);
    REQUIRE(ols.runs_used == 60);
    REQUIRE(irls.runs_used + summary.n_not_converged == 60);
    CHECK(irls.runs_used > 50);

    // Strong serial correlation makes identity weighting clearly less
    // efficient for the slope; sixty replications are plenty to see it.
    CHECK(irls.covariance(1, 1) < ols.covariance(1, 1));

    // Both estimators are unbiased; their means should sit near the truth
    // (the BLUE benchmark gives the scale of the Monte Carlo noise).
    const double se0 = std::sqrt(summary.exact_blue(0, 0) / 60.0);
    const double se1 = std::sqrt(summary.exact_blue(1, 1) / 60.0);
    CHECK_THAT(irls.mean(0), WithinAbs(spec.beta_true(0), 6.0 * se0));
    CHECK_THAT(irls.mean(1), WithinAbs(spec.beta_true(1), 6.0 * se1));

    int histogram_total = 0;
    for (const auto& [steps, count] : summary.step_histogram) {
        CHECK(steps >= 2);
        histogram_total += count;
    }
    CHECK(histogram_total == irls.runs_used);
}

TEST_CASE("scenario and comparison inputs are validated") {
    iee::ScenarioSpec spec;

    iee::ScenarioSpec bad_n = spec;
    bad_n.n = 0;
    CHECK_THROWS_AS(iee::generate(bad_n), iee::ValidationError);

    iee::ScenarioSpec bad_phi = spec;
    bad_phi.phi = 1.0;
    CHECK_THROWS_AS(iee::generate(bad_phi), iee::ValidationError);

    iee::ScenarioSpec bad_fraction = spec;
    bad_fraction.fraction_135 = 1.5;
    CHECK_THROWS_AS(iee::generate(bad_fraction), iee::ValidationError);

    iee::ScenarioSpec bad_var = spec;
    bad_var.sigma_w2 = -1.0;
    CHECK_THROWS_AS(iee::generate(bad_var), iee::ValidationError);

    CHECK_THROWS_AS(iee::monte_carlo(spec, 0, {iee::Estimator::Ols}), iee::ValidationError);
    CHECK_THROWS_AS(iee::monte_carlo(spec, 5, {}), iee::ValidationError);
}
