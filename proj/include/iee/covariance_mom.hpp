#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/gee_solver.hpp"
#include "iee/mean_model.hpp"

namespace iee {

/// What to do when an assembled covariance matrix is not positive
/// definite. Componentwise entries are averaged over different subject
/// sets, so finite samples can produce indefinite assemblies even though
/// each entry is a valid moment estimate.
struct RepairPolicy {
    enum class Mode { ErrorOnIndefinite, ClipEigenvalues };

    Mode mode = Mode::ClipEigenvalues;
    /// Relative eigenvalue floor: eigenvalues below pd_floor * max(lambda_max, 1)
    /// are raised to that level (ClipEigenvalues) or rejected
    /// (ErrorOnIndefinite). Must lie in [0, 1).
    double pd_floor = 1e-8;
};

/// Clips or validates the spectrum of a symmetric matrix. When the
/// smallest eigenvalue already clears the floor the input is returned
/// unchanged (bit-identical). `repaired`, when non-null, reports whether
/// clipping occurred.
[[nodiscard]] inline Eigen::MatrixXd repair_pd(const Eigen::MatrixXd& V,
                                               const RepairPolicy& policy,
                                               bool* repaired = nullptr) {
    if (!(policy.pd_floor >= 0.0 && policy.pd_floor < 1.0)) {
        throw ValidationError("pd_floor must lie in [0, 1)");
    }
    if (repaired != nullptr) *repaired = false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
    if (eig.info() != Eigen::Success) {
        throw IndefiniteCovariance("eigendecomposition failed during covariance repair");
    }
    const double lambda_max = eig.eigenvalues().maxCoeff();
    const double floor = policy.pd_floor * std::max(lambda_max, 1.0);
    const double lambda_min = eig.eigenvalues().minCoeff();
    if (lambda_min >= floor) return V;
    if (policy.mode == RepairPolicy::Mode::ErrorOnIndefinite) {
        throw IndefiniteCovariance("covariance matrix has eigenvalue " +
                                   std::to_string(lambda_min) + " below floor " +
                                   std::to_string(floor));
    }
    Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(floor);
    Eigen::MatrixXd result =
        eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    result = ((result + result.transpose()) / 2.0).eval();
    if (repaired != nullptr) *repaired = true;
    return result;
}

/// A method-of-moments covariance estimate: the parameter vector v in the
/// canonical (j <= k, l) key order, the per-subject matrices assembled
/// from it (after any repair), and per-subject repair flags.
///
/// `v` holds the raw moment averages; repair affects only `assembled`.
struct CovarianceEstimate {
    std::vector<CovKey> keys;
    Eigen::VectorXd v;
    CovarianceSet assembled;
    std::vector<bool> repaired;

    [[nodiscard]] int parameter_count() const { return static_cast<int>(keys.size()); }

    /// Value for a (j, k, l) key (order-normalized), or throws.
    [[nodiscard]] double value(int j, int k, int l) const {
        if (j > k) std::swap(j, k);
        const CovKey key{j, k, l};
        auto it = std::lower_bound(keys.begin(), keys.end(), key);
        if (it == keys.end() || !(*it == key)) {
            throw MissingGroup("no covariance entry for (" + std::to_string(j) + ", " +
                               std::to_string(k) + ", " + std::to_string(l) + ")");
        }
        return v(static_cast<int>(it - keys.begin()));
    }
};

namespace detail {

inline std::vector<Eigen::VectorXd> residuals(const LongitudinalDataset& ds,
                                              const MeanModel& m,
                                              const Eigen::VectorXd& beta) {
    std::vector<Eigen::VectorXd> r;
    r.reserve(static_cast<size_t>(ds.subject_count()));
    for (const auto& subject : ds.subjects()) {
        r.push_back(subject.responses -
                    evaluate_mean(m, subject.covariates, beta, subject.visit_indices));
    }
    return r;
}

}  // namespace detail

/// Componentwise method of moments: each class value is the plain average
/// of residual cross-products over its index set,
///   v(j, k, l) = n(j,k,l)^{-1} sum_{i in I(j,k,l)} r_ij r_ik,
/// with divisor exactly n(j,k,l) (no degrees-of-freedom correction).
/// Per-subject matrices are then assembled entry-by-entry from v and
/// repaired per policy.
[[nodiscard]] inline CovarianceEstimate estimate_componentwise(const LongitudinalDataset& ds,
                                                               const CovarianceGrouping& g,
                                                               const MeanModel& m,
                                                               const Eigen::VectorXd& beta,
                                                               const RepairPolicy& policy = {}) {
    if (g.subject_count() != ds.subject_count()) {
        throw MissingGroup("grouping was built for " + std::to_string(g.subject_count()) +
                           " subjects but the dataset has " +
                           std::to_string(ds.subject_count()));
    }
    const auto resid = detail::residuals(ds, m, beta);

    const int R = g.parameter_count();
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(R);
    for (int si = 0; si < ds.subject_count(); ++si) {
        const int mv = ds.subject(si).n_visits();
        const auto& entries = g.subject_entries()[static_cast<size_t>(si)];
        if (entries.size() != static_cast<size_t>(mv * (mv + 1) / 2)) {
            throw MissingGroup("grouping does not cover subject '" +
                               ds.subject(si).subject_id + "'");
        }
        const Eigen::VectorXd& r = resid[static_cast<size_t>(si)];
        for (int a = 0; a < mv; ++a) {
            for (int b = a; b < mv; ++b) {
                sums(entries[static_cast<size_t>(
                    CovarianceGrouping::triangle_index(a, b, mv))]) += r(a) * r(b);
            }
        }
    }

    CovarianceEstimate est;
    est.keys = g.keys();
    est.v.resize(R);
    for (int r = 0; r < R; ++r) {
        est.v(r) = sums(r) / static_cast<double>(g.counts()[static_cast<size_t>(r)]);
    }

    est.assembled.matrices.reserve(static_cast<size_t>(ds.subject_count()));
    est.repaired.resize(static_cast<size_t>(ds.subject_count()), false);
    for (int si = 0; si < ds.subject_count(); ++si) {
        const int mv = ds.subject(si).n_visits();
        Eigen::MatrixXd V(mv, mv);
        for (int a = 0; a < mv; ++a) {
            for (int b = a; b < mv; ++b) {
                const double value = est.v(g.entry(si, a, b, mv));
                V(a, b) = value;
                V(b, a) = value;
            }
        }
        bool flag = false;
        est.assembled.matrices.push_back(repair_pd(V, policy, &flag));
        est.repaired[static_cast<size_t>(si)] = flag;
    }
    return est;
}

/// Matrix-wise method of moments under a partition design: one averaged
/// residual outer-product matrix per block,
///   V(l) = n(l)^{-1} sum_{i: J_i = block l} r_i r_i',
/// shared by every subject in the block. When the visit sets tile
/// disjointly this coincides entrywise with the componentwise estimator.
[[nodiscard]] inline CovarianceEstimate estimate_matrixwise(const LongitudinalDataset& ds,
                                                            const PartitionDesign& part,
                                                            const MeanModel& m,
                                                            const Eigen::VectorXd& beta,
                                                            const RepairPolicy& policy = {}) {
    const int n = ds.subject_count();
    if (part.block_of.size() != static_cast<size_t>(n)) {
        throw NoPartition("partition covers " + std::to_string(part.block_of.size()) +
                          " subjects but the dataset has " + std::to_string(n));
    }
    std::set<int> seen_visits;
    for (const auto& block : part.blocks) {
        for (int j : block) {
            if (!seen_visits.insert(j).second) {
                throw NoPartition("partition blocks overlap at visit " + std::to_string(j));
            }
        }
    }
    for (int si = 0; si < n; ++si) {
        const int bl = part.block_of[static_cast<size_t>(si)];
        if (bl < 0 || bl >= static_cast<int>(part.blocks.size()) ||
            ds.subject(si).visit_indices != part.blocks[static_cast<size_t>(bl)]) {
            throw NoPartition("subject '" + ds.subject(si).subject_id +
                              "' does not match its partition block");
        }
    }

    const auto resid = detail::residuals(ds, m, beta);
    const int n_blocks = static_cast<int>(part.blocks.size());
    std::vector<Eigen::MatrixXd> block_avg(static_cast<size_t>(n_blocks));
    std::vector<int> block_count(static_cast<size_t>(n_blocks), 0);
    for (int bl = 0; bl < n_blocks; ++bl) {
        const int mv = static_cast<int>(part.blocks[static_cast<size_t>(bl)].size());
        block_avg[static_cast<size_t>(bl)] = Eigen::MatrixXd::Zero(mv, mv);
    }
    for (int si = 0; si < n; ++si) {
        const int bl = part.block_of[static_cast<size_t>(si)];
        const Eigen::VectorXd& r = resid[static_cast<size_t>(si)];
        block_avg[static_cast<size_t>(bl)].noalias() += r * r.transpose();
        ++block_count[static_cast<size_t>(bl)];
    }
    for (int bl = 0; bl < n_blocks; ++bl) {
        if (block_count[static_cast<size_t>(bl)] == 0) {
            throw NoPartition("partition block " + std::to_string(bl + 1) +
                              " has no subjects");
        }
        block_avg[static_cast<size_t>(bl)] /=
            static_cast<double>(block_count[static_cast<size_t>(bl)]);
    }

    // Canonical parameter vector: every within-block pair, label 1 (a pair
    // can live in only one block, so pair identity alone is unambiguous).
    std::map<CovKey, double> entries;
    for (int bl = 0; bl < n_blocks; ++bl) {
        const auto& visits = part.blocks[static_cast<size_t>(bl)];
        const auto& V = block_avg[static_cast<size_t>(bl)];
        for (size_t a = 0; a < visits.size(); ++a) {
            for (size_t b = a; b < visits.size(); ++b) {
                entries.emplace(CovKey{visits[a], visits[b], 1},
                                V(static_cast<int>(a), static_cast<int>(b)));
            }
        }
    }

    CovarianceEstimate est;
    est.keys.reserve(entries.size());
    est.v.resize(static_cast<int>(entries.size()));
    int r = 0;
    for (const auto& [key, value] : entries) {
        est.keys.push_back(key);
        est.v(r++) = value;
    }

    std::vector<Eigen::MatrixXd> block_repaired(static_cast<size_t>(n_blocks));
    std::vector<bool> block_flag(static_cast<size_t>(n_blocks), false);
    for (int bl = 0; bl < n_blocks; ++bl) {
        bool flag = false;
        block_repaired[static_cast<size_t>(bl)] =
            repair_pd(block_avg[static_cast<size_t>(bl)], policy, &flag);
        block_flag[static_cast<size_t>(bl)] = flag;
    }
    est.assembled.matrices.reserve(static_cast<size_t>(n));
    est.repaired.resize(static_cast<size_t>(n), false);
    for (int si = 0; si < n; ++si) {
        const int bl = part.block_of[static_cast<size_t>(si)];
        est.assembled.matrices.push_back(block_repaired[static_cast<size_t>(bl)]);
        est.repaired[static_cast<size_t>(si)] = block_flag[static_cast<size_t>(bl)];
    }
    return est;
}

/// Convenience overload: detects the partition or throws NoPartition.
[[nodiscard]] inline CovarianceEstimate estimate_matrixwise(const LongitudinalDataset& ds,
                                                            const MeanModel& m,
                                                            const Eigen::VectorXd& beta,
                                                            const RepairPolicy& policy = {}) {
    auto part = detect_partition(ds);
    if (!part) {
        throw NoPartition("the observed visit sets do not tile disjointly, so the "
                          "matrix-wise estimator is not defined");
    }
    return estimate_matrixwise(ds, *part, m, beta, policy);
}

/// One averaged residual outer-product matrix per distinct visit set.
struct VisitSetAverage {
    std::vector<int> visits;
    int subject_count = 0;
    Eigen::MatrixXd average;
};

/// Groups subjects by their exact visit set and averages the residual
/// outer products within each group. Unlike the matrix-wise estimator
/// this never requires disjointness, so on overlapping designs it shows
/// how per-set averaging splits the sample (e.g. two half-sample
/// estimates of a shared variance), whereas the componentwise estimator
/// pools every subject observed at the shared visit.
[[nodiscard]] inline std::vector<VisitSetAverage> outer_product_averages_by_visit_set(
    const LongitudinalDataset& ds, const MeanModel& m, const Eigen::VectorXd& beta) {
    const auto resid = detail::residuals(ds, m, beta);
    std::map<std::vector<int>, VisitSetAverage> groups;
    for (int si = 0; si < ds.subject_count(); ++si) {
        const auto& visits = ds.subject(si).visit_indices;
        auto [it, inserted] = groups.try_emplace(visits);
        if (inserted) {
            it->second.visits = visits;
            it->second.average =
                Eigen::MatrixXd::Zero(ds.subject(si).n_visits(), ds.subject(si).n_visits());
        }
        const Eigen::VectorXd& r = resid[static_cast<size_t>(si)];
        it->second.average.noalias() += r * r.transpose();
        ++it->second.subject_count;
    }
    std::vector<VisitSetAverage> result;
    result.reserve(groups.size());
    for (auto& [visits, group] : groups) {
        group.average /= static_cast<double>(group.subject_count);
        result.push_back(std::move(group));
    }
    return result;
}

}  // namespace iee
