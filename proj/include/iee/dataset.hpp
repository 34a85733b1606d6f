#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iee/errors.hpp"

namespace iee {

/// One subject's observations: the visit set J_i (sorted 1-based indices
/// into the common visit grid), the response vector Y_i and the covariate
/// matrix X_i with one row per observed visit.
struct SubjectRecord {
    std::string subject_id;
    std::vector<int> visit_indices;
    Eigen::VectorXd responses;
    Eigen::MatrixXd covariates;

    [[nodiscard]] int n_visits() const {
        return static_cast<int>(visit_indices.size());
    }

    /// Position of visit j within this subject's rows, or -1 if absent.
    [[nodiscard]] int position_of(int visit) const {
        auto it = std::lower_bound(visit_indices.begin(), visit_indices.end(), visit);
        if (it == visit_indices.end() || *it != visit) return -1;
        return static_cast<int>(it - visit_indices.begin());
    }
};

/// Unbalanced longitudinal data over a grid of b prespecified visit times,
/// with p regression covariates per observation. Immutable after
/// construction and safe to share across threads.
class LongitudinalDataset {
public:
    LongitudinalDataset(std::vector<SubjectRecord> subjects, int b, int p)
        : subjects_(std::move(subjects)), b_(b), p_(p) {
        for (int i = 0; i < subject_count(); ++i) {
            id_to_index_.emplace(subjects_[i].subject_id, i);
        }
    }

    [[nodiscard]] const std::vector<SubjectRecord>& subjects() const { return subjects_; }
    [[nodiscard]] const SubjectRecord& subject(int i) const { return subjects_[static_cast<size_t>(i)]; }
    [[nodiscard]] int subject_count() const { return static_cast<int>(subjects_.size()); }
    [[nodiscard]] int visit_count() const { return b_; }
    [[nodiscard]] int coefficient_count() const { return p_; }

    [[nodiscard]] int total_observations() const {
        int total = 0;
        for (const auto& s : subjects_) total += s.n_visits();
        return total;
    }

    /// Subject position for an id, or -1 when unknown.
    [[nodiscard]] int index_of(const std::string& subject_id) const {
        auto it = id_to_index_.find(subject_id);
        return it == id_to_index_.end() ? -1 : it->second;
    }

    /// Returns a copy with every response scaled by c (used by the scale
    /// equivariance property checks).
    [[nodiscard]] LongitudinalDataset with_scaled_responses(double c) const {
        std::vector<SubjectRecord> scaled = subjects_;
        for (auto& s : scaled) s.responses *= c;
        return LongitudinalDataset(std::move(scaled), b_, p_);
    }

private:
    std::vector<SubjectRecord> subjects_;
    int b_;
    int p_;
    std::unordered_map<std::string, int> id_to_index_;
};

/// One raw input row: a single (subject, visit) observation.
/// `source_line` is carried through to error messages when the row came
/// from a file (0 means unknown; the ordinal position is reported instead).
struct ObservationRow {
    std::string subject_id;
    int visit = 0;
    double response = 0.0;
    std::vector<double> covariates;
    long source_line = 0;
};

namespace detail {

inline std::string row_location(const ObservationRow& row, size_t ordinal) {
    if (row.source_line > 0) return "line " + std::to_string(row.source_line);
    return "row " + std::to_string(ordinal + 1);
}

}  // namespace detail

/// Groups raw rows by subject (in order of first appearance), sorts each
/// subject's rows by visit index and validates all dataset invariants.
///
/// Throws ValidationError naming the offending row for duplicate
/// (subject, visit) pairs, inconsistent covariate arity, visits outside
/// 1..b, or non-finite values.
[[nodiscard]] inline LongitudinalDataset build_dataset(
    const std::vector<ObservationRow>& rows) {
    if (rows.empty()) throw ValidationError("no subjects");

    const size_t p = rows.front().covariates.size();
    if (p == 0) {
        throw ValidationError("no covariate columns (" +
                              detail::row_location(rows.front(), 0) + ")");
    }

    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<size_t>> by_subject;
    int b = 0;
    for (size_t idx = 0; idx < rows.size(); ++idx) {
        const auto& row = rows[idx];
        const std::string loc = detail::row_location(row, idx);
        if (row.subject_id.empty()) {
            throw ValidationError("empty subject id (" + loc + ")");
        }
        if (row.visit < 1) {
            throw ValidationError("visit index " + std::to_string(row.visit) +
                                  " is not a positive integer (" + loc + ")");
        }
        if (row.covariates.size() != p) {
            throw ValidationError(
                "inconsistent covariate count: expected " + std::to_string(p) +
                ", got " + std::to_string(row.covariates.size()) + " (" + loc + ")");
        }
        if (!std::isfinite(row.response)) {
            throw ValidationError("non-finite response (" + loc + ")");
        }
        for (double x : row.covariates) {
            if (!std::isfinite(x)) {
                throw ValidationError("non-finite covariate (" + loc + ")");
            }
        }
        b = std::max(b, row.visit);
        auto [it, inserted] = by_subject.try_emplace(row.subject_id);
        if (inserted) order.push_back(row.subject_id);
        it->second.push_back(idx);
    }

    std::vector<SubjectRecord> subjects;
    subjects.reserve(order.size());
    for (const auto& id : order) {
        auto indices = by_subject.at(id);
        std::sort(indices.begin(), indices.end(), [&rows](size_t a, size_t c) {
            return rows[a].visit < rows[c].visit;
        });
        for (size_t q = 1; q < indices.size(); ++q) {
            if (rows[indices[q]].visit == rows[indices[q - 1]].visit) {
                throw ValidationError(
                    "duplicate (subject, visit) pair: subject '" + id + "', visit " +
                    std::to_string(rows[indices[q]].visit) + " (" +
                    detail::row_location(rows[indices[q]], indices[q]) + ")");
            }
        }
        SubjectRecord rec;
        rec.subject_id = id;
        const int m = static_cast<int>(indices.size());
        rec.visit_indices.reserve(indices.size());
        rec.responses.resize(m);
        rec.covariates.resize(m, static_cast<int>(p));
        for (int q = 0; q < m; ++q) {
            const auto& row = rows[indices[static_cast<size_t>(q)]];
            rec.visit_indices.push_back(row.visit);
            rec.responses(q) = row.response;
            for (size_t c = 0; c < p; ++c) {
                rec.covariates(q, static_cast<int>(c)) = row.covariates[c];
            }
        }
        subjects.push_back(std::move(rec));
    }

    return LongitudinalDataset(std::move(subjects), b, static_cast<int>(p));
}

/// A distinct covariance parameter v(j, k, l): the pair of visit indices
/// (canonicalized to j <= k) and the group label l.
struct CovKey {
    int j = 0;
    int k = 0;
    int l = 0;

    friend bool operator==(const CovKey&, const CovKey&) = default;
    friend auto operator<=>(const CovKey& a, const CovKey& b) {
        return std::tie(a.j, a.k, a.l) <=> std::tie(b.j, b.k, b.l);
    }
};

/// Explicit group-label declaration for one (subject, j, k) cell.
struct ExplicitLabel {
    std::string subject_id;
    int j = 0;
    int k = 0;
    int l = 0;
};

/// How the finitely many distinct covariance classes are declared. The
/// group structure is an input: it cannot be inferred from the data.
class GroupingSpec {
public:
    enum class Mode { PairOnly, ByCovariateLevel, Explicit };

    /// One class per time pair (j, k): covariances depend on the pair only.
    [[nodiscard]] static GroupingSpec pair_only() { return GroupingSpec(Mode::PairOnly); }

    /// Class label = value of an integer, time-constant covariate column
    /// (0-based index into the covariate matrix).
    [[nodiscard]] static GroupingSpec by_covariate(int column_index) {
        GroupingSpec s(Mode::ByCovariateLevel);
        s.column_index_ = column_index;
        return s;
    }

    /// User-supplied label for every (subject, j, k) cell.
    [[nodiscard]] static GroupingSpec explicit_labels(std::vector<ExplicitLabel> labels) {
        GroupingSpec s(Mode::Explicit);
        s.labels_ = std::move(labels);
        return s;
    }

    [[nodiscard]] Mode mode() const { return mode_; }
    [[nodiscard]] int column_index() const { return column_index_; }
    [[nodiscard]] const std::vector<ExplicitLabel>& labels() const { return labels_; }

private:
    explicit GroupingSpec(Mode mode) : mode_(mode) {}
    Mode mode_;
    int column_index_ = -1;
    std::vector<ExplicitLabel> labels_;
};

/// The covariance-class bookkeeping: the pair set D (upper triangular),
/// the index sets I(j, k, l), their cardinalities n(j, k, l), and a
/// per-subject map from upper-triangle cell to parameter index. Immutable
/// after construction.
class CovarianceGrouping {
public:
    CovarianceGrouping(std::vector<CovKey> keys,
                       std::vector<std::vector<int>> index_sets,
                       std::vector<std::vector<int>> subject_entries,
                       int subject_count)
        : keys_(std::move(keys)),
          index_sets_(std::move(index_sets)),
          subject_entries_(std::move(subject_entries)),
          subject_count_(subject_count) {
        counts_.reserve(index_sets_.size());
        for (const auto& s : index_sets_) counts_.push_back(static_cast<int>(s.size()));
        for (const auto& key : keys_) {
            pair_set_.emplace(key.j, key.k);
            ++labels_per_pair_[{key.j, key.k}];
        }
    }

    /// Number of distinct covariance parameters (R).
    [[nodiscard]] int parameter_count() const { return static_cast<int>(keys_.size()); }

    /// Canonical key order: sorted by (j, k, l) with j <= k. The v vector
    /// of every CovarianceEstimate follows this order.
    [[nodiscard]] const std::vector<CovKey>& keys() const { return keys_; }

    /// I(j, k, l) as subject positions, aligned with keys().
    [[nodiscard]] const std::vector<std::vector<int>>& index_sets() const { return index_sets_; }

    /// n(j, k, l), aligned with keys().
    [[nodiscard]] const std::vector<int>& counts() const { return counts_; }

    /// The pair set D, upper triangular (j <= k); the transposed pairs are
    /// implied by symmetry.
    [[nodiscard]] const std::set<std::pair<int, int>>& pair_set() const { return pair_set_; }

    /// L_jk: number of group labels registered for pair (j, k).
    [[nodiscard]] int label_count(int j, int k) const {
        if (j > k) std::swap(j, k);
        auto it = labels_per_pair_.find({j, k});
        return it == labels_per_pair_.end() ? 0 : it->second;
    }

    [[nodiscard]] int subject_count() const { return subject_count_; }

    /// Parameter index for the (a, b) upper-triangle cell (0-based row
    /// positions within subject si's visit set, a <= b).
    [[nodiscard]] int entry(int si, int a, int b, int n_visits) const {
        return subject_entries_[static_cast<size_t>(si)]
                               [static_cast<size_t>(triangle_index(a, b, n_visits))];
    }

    [[nodiscard]] const std::vector<std::vector<int>>& subject_entries() const {
        return subject_entries_;
    }

    /// Row-major upper-triangle linearization for an m x m symmetric matrix.
    [[nodiscard]] static int triangle_index(int a, int b, int m) {
        return a * m - a * (a - 1) / 2 + (b - a);
    }

private:
    std::vector<CovKey> keys_;
    std::vector<std::vector<int>> index_sets_;
    std::vector<int> counts_;
    std::vector<std::vector<int>> subject_entries_;
    int subject_count_;
    std::set<std::pair<int, int>> pair_set_;
    std::map<std::pair<int, int>, int> labels_per_pair_;
};

namespace detail {

/// Label for subject si at pair (j, k) under the given spec.
inline int group_label(const LongitudinalDataset& ds, const GroupingSpec& spec,
                       const std::map<std::tuple<std::string, int, int>, int>& explicit_map,
                       int si, int j, int k) {
    switch (spec.mode()) {
        case GroupingSpec::Mode::PairOnly:
            return 1;
        case GroupingSpec::Mode::ByCovariateLevel: {
            const auto& subject = ds.subject(si);
            const double value = subject.covariates(0, spec.column_index());
            return static_cast<int>(std::llround(value));
        }
        case GroupingSpec::Mode::Explicit: {
            auto it = explicit_map.find({ds.subject(si).subject_id, j, k});
            if (it == explicit_map.end()) {
                throw ValidationError("explicit grouping is missing a label for subject '" +
                                      ds.subject(si).subject_id + "', pair (" +
                                      std::to_string(j) + ", " + std::to_string(k) + ")");
            }
            return it->second;
        }
    }
    throw ValidationError("unknown grouping mode");
}

}  // namespace detail

/// Builds the covariance-class machinery for a dataset: assigns a group
/// label to every (i, j, k) with j, k in J_i, collects the index sets
/// I(j, k, l) and fixes the canonical parameter order.
///
/// Deterministic: identical inputs yield identical label assignments.
[[nodiscard]] inline CovarianceGrouping build_grouping(const LongitudinalDataset& ds,
                                                       const GroupingSpec& spec) {
    if (spec.mode() == GroupingSpec::Mode::ByCovariateLevel) {
        const int col = spec.column_index();
        if (col < 0 || col >= ds.coefficient_count()) {
            throw ValidationError("grouping covariate column index " + std::to_string(col) +
                                  " out of range (p = " +
                                  std::to_string(ds.coefficient_count()) + ")");
        }
        for (const auto& subject : ds.subjects()) {
            for (int q = 0; q < subject.n_visits(); ++q) {
                const double value = subject.covariates(q, col);
                if (std::nearbyint(value) != value || std::abs(value) > 1e9) {
                    throw ValidationError("grouping covariate is not integer-valued for subject '" +
                                          subject.subject_id + "'");
                }
                if (value != subject.covariates(0, col)) {
                    throw ValidationError("grouping covariate is time-varying for subject '" +
                                          subject.subject_id + "'");
                }
            }
        }
    }

    std::map<std::tuple<std::string, int, int>, int> explicit_map;
    if (spec.mode() == GroupingSpec::Mode::Explicit) {
        for (const auto& label : spec.labels()) {
            int j = label.j, k = label.k;
            if (j > k) std::swap(j, k);
            auto [it, inserted] = explicit_map.try_emplace({label.subject_id, j, k}, label.l);
            if (!inserted && it->second != label.l) {
                throw ValidationError("conflicting explicit labels for subject '" +
                                      label.subject_id + "', pair (" + std::to_string(j) +
                                      ", " + std::to_string(k) + ")");
            }
        }
    }

    // Collect members per (j, k, l), keyed in canonical order.
    std::map<CovKey, std::vector<int>> members;
    std::vector<std::vector<std::pair<CovKey, size_t>>> pending(
        static_cast<size_t>(ds.subject_count()));
    for (int si = 0; si < ds.subject_count(); ++si) {
        const auto& subject = ds.subject(si);
        const int m = subject.n_visits();
        auto& cells = pending[static_cast<size_t>(si)];
        cells.reserve(static_cast<size_t>(m * (m + 1) / 2));
        for (int a = 0; a < m; ++a) {
            for (int b = a; b < m; ++b) {
                const int j = subject.visit_indices[static_cast<size_t>(a)];
                const int k = subject.visit_indices[static_cast<size_t>(b)];
                const int l = detail::group_label(ds, spec, explicit_map, si, j, k);
                const CovKey key{j, k, l};
                members[key].push_back(si);
                cells.emplace_back(key, 0);
            }
        }
    }

    std::vector<CovKey> keys;
    std::vector<std::vector<int>> index_sets;
    std::map<CovKey, size_t> key_index;
    keys.reserve(members.size());
    for (auto& [key, subject_list] : members) {
        key_index.emplace(key, keys.size());
        keys.push_back(key);
        index_sets.push_back(std::move(subject_list));
    }

    std::vector<std::vector<int>> subject_entries(static_cast<size_t>(ds.subject_count()));
    for (int si = 0; si < ds.subject_count(); ++si) {
        auto& cells = pending[static_cast<size_t>(si)];
        auto& entries = subject_entries[static_cast<size_t>(si)];
        entries.reserve(cells.size());
        for (const auto& [key, unused] : cells) {
            entries.push_back(static_cast<int>(key_index.at(key)));
        }
    }

    return CovarianceGrouping(std::move(keys), std::move(index_sets),
                              std::move(subject_entries), ds.subject_count());
}

/// A disjoint tiling of the observed visit sets: every subject's J_i
/// equals exactly one block. Exists iff the distinct visit sets are
/// pairwise disjoint, which is the hypothesis under which the
/// componentwise and matrix-wise moment estimators coincide.
struct PartitionDesign {
    std::vector<std::vector<int>> blocks;
    std::vector<int> block_of;  // subject position -> block index
};

/// Checks the disjoint-visit-set hypothesis by direct set comparison and
/// returns the partition when it holds.
[[nodiscard]] inline std::optional<PartitionDesign> detect_partition(
    const LongitudinalDataset& ds) {
    std::vector<std::vector<int>> blocks;
    std::map<std::vector<int>, int> block_index;
    std::vector<int> block_of(static_cast<size_t>(ds.subject_count()), -1);
    for (int si = 0; si < ds.subject_count(); ++si) {
        const auto& visits = ds.subject(si).visit_indices;
        auto [it, inserted] = block_index.try_emplace(visits, static_cast<int>(blocks.size()));
        if (inserted) blocks.push_back(visits);
        block_of[static_cast<size_t>(si)] = it->second;
    }
    std::set<int> seen;
    for (const auto& block : blocks) {
        for (int j : block) {
            if (!seen.insert(j).second) return std::nullopt;  // blocks overlap
        }
    }
    return PartitionDesign{std::move(blocks), std::move(block_of)};
}

}  // namespace iee
