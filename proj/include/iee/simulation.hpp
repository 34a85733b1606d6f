#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/gee_solver.hpp"
#include "iee/iee_driver.hpp"
#include "iee/linalg.hpp"
#include "iee/rng.hpp"

namespace iee {

/// A seeded synthetic-data configuration: the visit-set design, the noise
/// law, the true coefficients and the sample size. The regression mean is
/// beta_0 + beta_1 * x with a scalar covariate x (covariate rows are
/// (1, x)).
///
/// Designs:
///  - SplitVisits:    a fraction of subjects observed at visits {1,3,5},
///                    the rest at {2,4} (disjoint visit sets).
///  - SharedBaseline: every subject observed at visit 1; half follow up
///                    at visit 2, half at visit 3 (overlapping sets).
///  - HeteroTwoVisit: all subjects observed at visits {1,2}, independent
///                    noise with per-visit standard deviations sigma_1,
///                    sigma_2, time-constant Uniform(0,1) covariate.
///
/// For the first two designs the noise is
///   Y_ij = x_ij' beta + u_i + w_ij + e_ij
/// with subject effect u_i (Gaussian or centered exponential, variance
/// sigma_u2), a stationary serial process w (AR(1) with parameter phi or
/// MA(1) with coefficient ma_theta, marginal variance sigma_w2) and
/// white measurement error e (variance sigma_e2), all independent. The
/// implied covariance entries are
///   v_jk = sigma_u2 + sigma_w2 * rho_w(|j - k|) + sigma_e2 * [j == k].
struct ScenarioSpec {
    enum class Design { SplitVisits, SharedBaseline, HeteroTwoVisit };
    enum class RandomEffect { Gaussian, CenteredExponential };
    enum class SerialProcess { Ar1, Ma1 };

    Design design = Design::SplitVisits;
    double fraction_135 = 0.4;  // SplitVisits: share of subjects observed at {1,3,5}

    RandomEffect random_effect = RandomEffect::Gaussian;
    SerialProcess process = SerialProcess::Ar1;
    double sigma_u2 = 1.0;
    double sigma_w2 = 9.0;
    double sigma_e2 = 1.0;
    double phi = 0.9;      // AR(1) coefficient, |phi| < 1
    double ma_theta = 1.0; // MA(1) coefficient (lag-1 correlation theta/(1+theta^2))

    double sigma_1 = 1.0;  // HeteroTwoVisit: noise s.d. at visit 1
    double sigma_2 = 4.0;  // HeteroTwoVisit: noise s.d. at visit 2

    Eigen::VectorXd beta_true = (Eigen::VectorXd(2) << 0.5, 1.0).finished();
    int n = 100;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw ValidationError("subject count must be >= 1");
        if (beta_true.size() != 2 || !all_finite(beta_true)) {
            throw ValidationError("beta_true must be a finite vector of length 2");
        }
        if (!(fraction_135 >= 0.0 && fraction_135 <= 1.0)) {
            throw ValidationError("fraction_135 must lie in [0, 1]");
        }
        if (!(std::abs(phi) < 1.0)) {
            throw ValidationError("the AR(1) coefficient must satisfy |phi| < 1");
        }
        if (sigma_u2 < 0.0 || sigma_w2 < 0.0 || sigma_e2 < 0.0) {
            throw ValidationError("variance components must be >= 0");
        }
        if (sigma_1 < 0.0 || sigma_2 < 0.0) {
            throw ValidationError("per-visit standard deviations must be >= 0");
        }
        if (!std::isfinite(ma_theta)) throw ValidationError("ma_theta must be finite");
    }

    /// Serial correlation of w at lag h under this spec.
    [[nodiscard]] double serial_correlation(int lag) const {
        if (lag == 0) return 1.0;
        if (process == SerialProcess::Ar1) return std::pow(phi, lag);
        return lag == 1 ? ma_theta / (1.0 + ma_theta * ma_theta) : 0.0;
    }
};

namespace detail {

/// Visit sets per subject for a design, in subject order.
[[nodiscard]] inline std::vector<std::vector<int>> design_visit_sets(const ScenarioSpec& spec) {
    std::vector<std::vector<int>> sets(static_cast<size_t>(spec.n));
    switch (spec.design) {
        case ScenarioSpec::Design::SplitVisits: {
            const int n_first = static_cast<int>(
                std::ceil(spec.fraction_135 * static_cast<double>(spec.n)));
            for (int i = 0; i < spec.n; ++i) {
                sets[static_cast<size_t>(i)] =
                    i < n_first ? std::vector<int>{1, 3, 5} : std::vector<int>{2, 4};
            }
            break;
        }
        case ScenarioSpec::Design::SharedBaseline: {
            const int n_first = (spec.n + 1) / 2;
            for (int i = 0; i < spec.n; ++i) {
                sets[static_cast<size_t>(i)] =
                    i < n_first ? std::vector<int>{1, 2} : std::vector<int>{1, 3};
            }
            break;
        }
        case ScenarioSpec::Design::HeteroTwoVisit:
            for (auto& s : sets) s = {1, 2};
            break;
    }
    return sets;
}

/// Scalar covariate per (subject, visit), drawn once per master seed and
/// shared by every replication: standard normal for the longitudinal
/// designs, Uniform(0,1) time-constant for the heteroscedastic design.
[[nodiscard]] inline std::vector<std::vector<double>> design_covariates(
    const ScenarioSpec& spec, const std::vector<std::vector<int>>& visit_sets) {
    std::mt19937_64 engine = make_engine(spec.seed, 0, "covariates");
    std::vector<std::vector<double>> x(static_cast<size_t>(spec.n));
    if (spec.design == ScenarioSpec::Design::HeteroTwoVisit) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < spec.n; ++i) {
            const double xi = unif(engine);
            x[static_cast<size_t>(i)].assign(visit_sets[static_cast<size_t>(i)].size(), xi);
        }
    } else {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int i = 0; i < spec.n; ++i) {
            x[static_cast<size_t>(i)].resize(visit_sets[static_cast<size_t>(i)].size());
            for (double& value : x[static_cast<size_t>(i)]) value = normal(engine);
        }
    }
    return x;
}

/// One subject's serial-process values w_1..w_b, exactly stationary with
/// marginal variance sigma_w2.
[[nodiscard]] inline std::vector<double> draw_serial_process(const ScenarioSpec& spec, int b,
                                                             std::mt19937_64& engine,
                                                             std::normal_distribution<double>& z) {
    std::vector<double> w(static_cast<size_t>(b), 0.0);
    const double sigma_w = std::sqrt(spec.sigma_w2);
    if (spec.sigma_w2 == 0.0) {
        // Consume the same number of draws as the noisy path so other
        // components stay aligned across parameter settings.
        for (int j = 0; j <= b; ++j) (void)z(engine);
        return w;
    }
    if (spec.process == ScenarioSpec::SerialProcess::Ar1) {
        const double innovation_sd = sigma_w * std::sqrt(1.0 - spec.phi * spec.phi);
        w[0] = sigma_w * z(engine);  // stationary start
        for (int j = 1; j < b; ++j) {
            w[static_cast<size_t>(j)] =
                spec.phi * w[static_cast<size_t>(j - 1)] + innovation_sd * z(engine);
        }
        (void)z(engine);  // keep draw count equal to the MA(1) path (b + 1 draws)
    } else {
        const double scale = sigma_w / std::sqrt(1.0 + spec.ma_theta * spec.ma_theta);
        double z_prev = z(engine);
        for (int j = 0; j < b; ++j) {
            const double z_now = z(engine);
            w[static_cast<size_t>(j)] = scale * (z_now + spec.ma_theta * z_prev);
            z_prev = z_now;
        }
    }
    return w;
}

[[nodiscard]] inline double draw_random_effect(const ScenarioSpec& spec,
                                               std::mt19937_64& engine,
                                               std::normal_distribution<double>& z,
                                               std::exponential_distribution<double>& expo) {
    const double sigma_u = std::sqrt(spec.sigma_u2);
    if (spec.random_effect == ScenarioSpec::RandomEffect::Gaussian) {
        const double draw = z(engine);
        return sigma_u * draw;
    }
    const double draw = expo(engine);
    return sigma_u * (draw - 1.0);  // centered: mean 0, variance sigma_u2
}

}  // namespace detail

/// Generates one replication of a scenario: the dataset together with the
/// true per-subject covariance matrices implied by the noise law.
/// Covariates depend only on the master seed (identical across
/// replications); noise is drawn from a child seed keyed by the
/// replication index.
[[nodiscard]] inline std::pair<LongitudinalDataset, CovarianceSet> generate(
    const ScenarioSpec& spec, std::uint64_t replication = 0) {
    spec.validate();
    const auto visit_sets = detail::design_visit_sets(spec);
    const auto covariates = detail::design_covariates(spec, visit_sets);

    std::mt19937_64 engine = make_engine(spec.seed, replication, "noise");
    std::normal_distribution<double> z(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);

    int b = 0;
    for (const auto& visits : visit_sets) b = std::max(b, visits.back());

    std::vector<SubjectRecord> subjects;
    CovarianceSet true_v;
    subjects.reserve(static_cast<size_t>(spec.n));
    true_v.matrices.reserve(static_cast<size_t>(spec.n));

    const double beta0 = spec.beta_true(0);
    const double beta1 = spec.beta_true(1);
    for (int i = 0; i < spec.n; ++i) {
        const auto& visits = visit_sets[static_cast<size_t>(i)];
        const int mv = static_cast<int>(visits.size());
        SubjectRecord rec;
        rec.subject_id = "S" + std::to_string(i + 1);
        rec.visit_indices = visits;
        rec.responses.resize(mv);
        rec.covariates.resize(mv, 2);
        Eigen::MatrixXd V(mv, mv);

        if (spec.design == ScenarioSpec::Design::HeteroTwoVisit) {
            const double sd[2] = {spec.sigma_1, spec.sigma_2};
            for (int q = 0; q < mv; ++q) {
                const double x = covariates[static_cast<size_t>(i)][static_cast<size_t>(q)];
                rec.covariates(q, 0) = 1.0;
                rec.covariates(q, 1) = x;
                rec.responses(q) = beta0 + beta1 * x + sd[q] * z(engine);
            }
            V = Eigen::MatrixXd::Zero(mv, mv);
            V(0, 0) = spec.sigma_1 * spec.sigma_1;
            V(1, 1) = spec.sigma_2 * spec.sigma_2;
        } else {
            const double u = detail::draw_random_effect(spec, engine, z, expo);
            const std::vector<double> w = detail::draw_serial_process(spec, b, engine, z);
            const double sigma_e = std::sqrt(spec.sigma_e2);
            for (int q = 0; q < mv; ++q) {
                const double x = covariates[static_cast<size_t>(i)][static_cast<size_t>(q)];
                rec.covariates(q, 0) = 1.0;
                rec.covariates(q, 1) = x;
                rec.responses(q) = beta0 + beta1 * x + u +
                                   w[static_cast<size_t>(visits[static_cast<size_t>(q)] - 1)] +
                                   sigma_e * z(engine);
            }
            for (int a = 0; a < mv; ++a) {
                for (int c = 0; c < mv; ++c) {
                    const int lag = std::abs(visits[static_cast<size_t>(a)] -
                                             visits[static_cast<size_t>(c)]);
                    V(a, c) = spec.sigma_u2 + spec.sigma_w2 * spec.serial_correlation(lag) +
                              (a == c ? spec.sigma_e2 : 0.0);
                }
            }
        }
        subjects.push_back(std::move(rec));
        true_v.matrices.push_back(std::move(V));
    }

    return {LongitudinalDataset(std::move(subjects), b, 2), std::move(true_v)};
}

/// Exact covariance of the weighted least-squares estimator that uses the
/// true covariances: (sum_i X_i' V_i^{-1} X_i)^{-1}. No simulation
/// involved; this is the efficiency benchmark for the fixed design.
[[nodiscard]] inline Eigen::MatrixXd exact_blue_covariance(const LongitudinalDataset& ds,
                                                           const CovarianceSet& true_v) {
    detail::check_covariance_set(ds, true_v);
    const int p = ds.coefficient_count();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < ds.subject_count(); ++i) {
        const auto& subject = ds.subject(i);
        const Eigen::LLT<Eigen::MatrixXd> llt =
            cholesky_pd(true_v.matrix(i), "true covariance for subject '" +
                                              subject.subject_id + "'");
        info.noalias() += subject.covariates.transpose() * llt.solve(subject.covariates);
    }
    info = ((info + info.transpose()) / 2.0).eval();
    return invert_spd(info, "design information matrix");
}

enum class Estimator { Ols, OneStep, Irls };

[[nodiscard]] inline std::string estimator_name(Estimator e) {
    switch (e) {
        case Estimator::Ols: return "ols";
        case Estimator::OneStep: return "onestep";
        case Estimator::Irls: return "irls";
    }
    return "?";
}

/// Monte Carlo moments for one estimator: runs that produced a usable
/// estimate (for the full alternation, runs that converged), their mean
/// vector and sample covariance (divisor runs_used - 1; zero matrix when
/// fewer than two runs).
struct EstimatorSummary {
    int runs_used = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Result of a Monte Carlo comparison over a fixed design.
struct McSummary {
    int n_rep = 0;
    std::map<Estimator, EstimatorSummary> estimators;
    std::map<int, int> step_histogram;  // steps-to-converge -> count, converged runs only
    Eigen::MatrixXd exact_blue;
    int n_not_converged = 0;  // alternating fits that exhausted the outer budget
    int n_failed = 0;         // replications aborted by estimation errors
};

/// Runs n_rep seeded replications of the scenario, fits every requested
/// estimator on identical data per replication and summarizes the
/// estimates. Replications that fail with an estimation error are
/// tallied and skipped; alternating fits that do not converge are
/// excluded from that estimator's moments (other estimators keep the
/// replication), matching how non-converged runs are conventionally
/// dropped from Monte Carlo moment tables.
[[nodiscard]] inline McSummary monte_carlo(const ScenarioSpec& spec, int n_rep,
                                           const std::vector<Estimator>& estimators,
                                           const IeeOptions& opts = {}) {
    spec.validate();
    if (n_rep < 1) throw ValidationError("replication count must be >= 1");
    if (estimators.empty()) throw ValidationError("no estimators requested");

    McSummary summary;
    summary.n_rep = n_rep;
    std::map<Estimator, std::vector<Eigen::VectorXd>> draws;
    for (Estimator e : estimators) draws[e];  // fixed iteration order: map key order

    bool have_blue = false;
    for (int rep = 0; rep < n_rep; ++rep) {
        auto [ds, true_v] = generate(spec, static_cast<std::uint64_t>(rep));
        if (!have_blue) {
            try {
                summary.exact_blue = exact_blue_covariance(ds, true_v);
            } catch (const Error&) {
                // Degenerate scenario (singular true covariance, e.g. all
                // noise switched off): the benchmark variance vanishes.
                summary.exact_blue =
                    Eigen::MatrixXd::Zero(ds.coefficient_count(), ds.coefficient_count());
            }
            have_blue = true;
        }
        const MeanModel linear = MeanModel::linear();
        try {
            const CovarianceGrouping grouping = build_grouping(ds, GroupingSpec::pair_only());
            // Stage this replication's estimates and commit only when every
            // estimator succeeded, so a failure never skews one summary.
            std::map<Estimator, Eigen::VectorXd> staged;
            std::optional<int> steps;
            bool not_converged = false;
            for (const auto& [which, store] : draws) {
                switch (which) {
                    case Estimator::Ols:
                        staged.emplace(which, ols_linear(ds));
                        break;
                    case Estimator::OneStep:
                        staged.emplace(which, one_step_fit(ds, linear, grouping, opts).beta_hat);
                        break;
                    case Estimator::Irls: {
                        const FitResult fit = fit_iee(ds, linear, grouping, opts);
                        if (fit.converged) {
                            staged.emplace(which, fit.beta_hat);
                            steps = fit.steps_to_converge;
                        } else {
                            not_converged = true;
                        }
                        break;
                    }
                }
            }
            for (auto& [which, estimate] : staged) {
                draws[which].push_back(std::move(estimate));
            }
            if (steps) ++summary.step_histogram[*steps];
            if (not_converged) ++summary.n_not_converged;
        } catch (const Error&) {
            ++summary.n_failed;
        }
    }

    const int p = 2;
    for (const auto& [which, store] : draws) {
        EstimatorSummary es;
        es.runs_used = static_cast<int>(store.size());
        es.mean = Eigen::VectorXd::Zero(p);
        es.covariance = Eigen::MatrixXd::Zero(p, p);
        for (const auto& estimate : store) es.mean += estimate;
        if (es.runs_used > 0) es.mean /= static_cast<double>(es.runs_used);
        if (es.runs_used > 1) {
            for (const auto& estimate : store) {
                const Eigen::VectorXd d = estimate - es.mean;
                es.covariance.noalias() += d * d.transpose();
            }
            es.covariance /= static_cast<double>(es.runs_used - 1);
        }
        summary.estimators.emplace(which, std::move(es));
    }
    return summary;
}

}  // namespace iee
