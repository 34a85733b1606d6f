#pragma once

#include <Eigen/Dense>

#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/gee_solver.hpp"

namespace test_helpers {

/// Builds observation rows from (subject, visit, y, covariates) tuples.
inline std::vector<iee::ObservationRow> rows_from(
    const std::vector<std::tuple<std::string, int, double, std::vector<double>>>& tuples) {
    std::vector<iee::ObservationRow> rows;
    rows.reserve(tuples.size());
    for (const auto& [subject, visit, y, x] : tuples) {
        iee::ObservationRow row;
        row.subject_id = subject;
        row.visit = visit;
        row.response = y;
        row.covariates = x;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline iee::LongitudinalDataset make_dataset(
    const std::vector<std::tuple<std::string, int, double, std::vector<double>>>& tuples) {
    return iee::build_dataset(rows_from(tuples));
}

/// Random unbalanced dataset: up to `max_b` visit slots, `p` covariates
/// (first column an intercept), subject visit sets drawn as random
/// nonempty subsets.
inline iee::LongitudinalDataset random_dataset(std::mt19937_64& rng, int n_subjects, int max_b,
                                               int p) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<iee::ObservationRow> rows;
    for (int i = 0; i < n_subjects; ++i) {
        std::vector<int> visits;
        while (visits.empty()) {
            visits.clear();
            for (int j = 1; j <= max_b; ++j) {
                if (coin(rng) == 1) visits.push_back(j);
            }
        }
        for (int j : visits) {
            iee::ObservationRow row;
            row.subject_id = "S" + std::to_string(i + 1);
            row.visit = j;
            row.response = normal(rng);
            row.covariates.resize(static_cast<size_t>(p));
            row.covariates[0] = 1.0;
            for (int c = 1; c < p; ++c) row.covariates[static_cast<size_t>(c)] = normal(rng);
            rows.push_back(std::move(row));
        }
    }
    return iee::build_dataset(rows);
}

/// Random symmetric positive-definite matrix with eigenvalues bounded
/// away from zero.
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(dim, dim);
    for (int r = 0; r < dim; ++r) {
        for (int c = 0; c < dim; ++c) a(r, c) = normal(rng);
    }
    Eigen::MatrixXd s = a * a.transpose() / static_cast<double>(dim);
    s += 0.5 * Eigen::MatrixXd::Identity(dim, dim);
    return ((s + s.transpose()) / 2.0).eval();
}

/// Random positive-definite working covariances matching the dataset.
inline iee::CovarianceSet random_covariance_set(std::mt19937_64& rng,
                                                const iee::LongitudinalDataset& ds) {
    iee::CovarianceSet set;
    set.matrices.reserve(static_cast<size_t>(ds.subject_count()));
    for (const auto& subject : ds.subjects()) {
        set.matrices.push_back(random_spd(rng, subject.n_visits()));
    }
    return set;
}

}  // namespace test_helpers
