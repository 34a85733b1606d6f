#pragma once

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/iee_driver.hpp"
#include "iee/simulation.hpp"

namespace iee {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV: one observation per row, header `subject,visit,y,x1,...,xp`.
// ---------------------------------------------------------------------------

namespace detail {

[[nodiscard]] inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

[[nodiscard]] inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string::size_type start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(trim(std::string_view(line).substr(start)));
            break;
        }
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

[[nodiscard]] inline double parse_double(const std::string& field, const std::string& where) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || field.empty()) {
        throw ValidationError("cannot parse '" + field + "' as a number (" + where + ")");
    }
    return value;
}

[[nodiscard]] inline int parse_int(const std::string& field, const std::string& where) {
    int value = 0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || field.empty()) {
        throw ValidationError("cannot parse '" + field + "' as an integer (" + where + ")");
    }
    return value;
}

}  // namespace detail

/// Parses observation rows from CSV text. The header must be
/// `subject,visit,y,x1,...,xp` (at least one covariate column); blank
/// lines are skipped. Errors name `source` and the line number.
[[nodiscard]] inline std::vector<ObservationRow> parse_observations_csv(
    std::istream& in, const std::string& source) {
    std::string line;
    long line_no = 0;

    // Header.
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        header = detail::split_csv_line(line);
        break;
    }
    if (header.size() < 4 || header[0] != "subject" || header[1] != "visit" ||
        header[2] != "y") {
        throw ValidationError("expected header 'subject,visit,y,x1,...' in " + source);
    }
    for (size_t c = 3; c < header.size(); ++c) {
        if (header[c] != "x" + std::to_string(c - 2)) {
            throw ValidationError("expected covariate column 'x" + std::to_string(c - 2) +
                                  "', found '" + header[c] + "' in " + source);
        }
    }
    const size_t p = header.size() - 3;

    std::vector<ObservationRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = source + ":" + std::to_string(line_no);
        if (fields.size() != header.size()) {
            throw ValidationError("expected " + std::to_string(header.size()) +
                                  " fields, found " + std::to_string(fields.size()) + " (" +
                                  where + ")");
        }
        ObservationRow row;
        row.subject_id = fields[0];
        row.visit = detail::parse_int(fields[1], where);
        row.response = detail::parse_double(fields[2], where);
        row.covariates.reserve(p);
        for (size_t c = 0; c < p; ++c) {
            row.covariates.push_back(detail::parse_double(fields[3 + c], where));
        }
        row.source_line = line_no;
        rows.push_back(std::move(row));
    }
    return rows;
}

[[nodiscard]] inline LongitudinalDataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return build_dataset(parse_observations_csv(in, path));
}

/// Writes a dataset in the same CSV format read_dataset_csv accepts.
inline void write_dataset_csv(const LongitudinalDataset& ds, std::ostream& out) {
    out << "subject,visit,y";
    for (int c = 1; c <= ds.coefficient_count(); ++c) out << ",x" << c;
    out << "\n";
    std::ostringstream cell;
    cell << std::setprecision(17);
    const auto number = [&cell](double value) {
        cell.str("");
        cell << value;
        return cell.str();
    };
    for (const auto& subject : ds.subjects()) {
        for (int q = 0; q < subject.n_visits(); ++q) {
            out << subject.subject_id << ',' << subject.visit_indices[static_cast<size_t>(q)]
                << ',' << number(subject.responses(q));
            for (int c = 0; c < ds.coefficient_count(); ++c) {
                out << ',' << number(subject.covariates(q, c));
            }
            out << "\n";
        }
    }
}

inline void write_dataset_csv(const LongitudinalDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    write_dataset_csv(ds, out);
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// JSON documents.
// ---------------------------------------------------------------------------

namespace detail {

[[nodiscard]] inline json parse_json_text(const std::string& text, const std::string& source) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw SchemaError("invalid JSON in " + source);
    return doc;
}

[[nodiscard]] inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_json_text(buffer.str(), path);
}

inline void require_keys(const json& doc, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : doc.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw SchemaError("unknown field '" + key + "' in " + where);
        }
    }
}

[[nodiscard]] inline double get_number(const json& doc, const std::string& key,
                                       double fallback, const std::string& where) {
    if (!doc.contains(key)) return fallback;
    if (!doc.at(key).is_number()) {
        throw SchemaError("field '" + key + "' must be a number in " + where);
    }
    return doc.at(key).get<double>();
}

[[nodiscard]] inline json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (int q = 0; q < v.size(); ++q) arr.push_back(v(q));
    return arr;
}

[[nodiscard]] inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

[[nodiscard]] inline json finite_or_null(double value) {
    if (std::isfinite(value)) return json(value);
    return json(nullptr);
}

}  // namespace detail

/// Reads and parses a JSON document from a file.
[[nodiscard]] inline json read_json_file(const std::string& path) {
    return detail::read_json_file(path);
}

/// Parses a grouping declaration:
///   {"mode": "pair_only"}
///   {"mode": "by_covariate", "column": "x2"}
///   {"mode": "explicit", "labels": [{"subject": "S1", "j": 1, "k": 3, "l": 2}, ...]}
/// Covariate columns are named as in the CSV header (x1 is the first).
[[nodiscard]] inline GroupingSpec grouping_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("mode") || !doc.at("mode").is_string()) {
        throw SchemaError("grouping document needs a string field 'mode'");
    }
    const std::string mode = doc.at("mode").get<std::string>();
    if (mode == "pair_only") {
        detail::require_keys(doc, {"mode"}, "grouping");
        return GroupingSpec::pair_only();
    }
    if (mode == "by_covariate") {
        detail::require_keys(doc, {"mode", "column"}, "grouping");
        if (!doc.contains("column") || !doc.at("column").is_string()) {
            throw SchemaError("grouping mode 'by_covariate' needs a string field 'column'");
        }
        const std::string column = doc.at("column").get<std::string>();
        if (column.size() < 2 || column[0] != 'x') {
            throw SchemaError("grouping column '" + column +
                              "' is not a covariate name of the form x<number>");
        }
        int number = 0;
        const char* begin = column.data() + 1;
        const char* end = column.data() + column.size();
        const auto [ptr, ec] = std::from_chars(begin, end, number);
        if (ec != std::errc() || ptr != end || number < 1) {
            throw SchemaError("grouping column '" + column +
                              "' is not a covariate name of the form x<number>");
        }
        return GroupingSpec::by_covariate(number - 1);
    }
    if (mode == "explicit") {
        detail::require_keys(doc, {"mode", "labels"}, "grouping");
        if (!doc.contains("labels") || !doc.at("labels").is_array()) {
            throw SchemaError("grouping mode 'explicit' needs an array field 'labels'");
        }
        std::vector<ExplicitLabel> labels;
        labels.reserve(doc.at("labels").size());
        for (const auto& entry : doc.at("labels")) {
            if (!entry.is_object() || !entry.contains("subject") ||
                !entry.at("subject").is_string() || !entry.contains("j") ||
                !entry.contains("k") || !entry.contains("l")) {
                throw SchemaError(
                    "each explicit label needs fields 'subject', 'j', 'k', 'l'");
            }
            detail::require_keys(entry, {"subject", "j", "k", "l"}, "explicit label");
            ExplicitLabel label;
            label.subject_id = entry.at("subject").get<std::string>();
            label.j = entry.at("j").get<int>();
            label.k = entry.at("k").get<int>();
            label.l = entry.at("l").get<int>();
            labels.push_back(std::move(label));
        }
        return GroupingSpec::explicit_labels(std::move(labels));
    }
    throw SchemaError("unknown grouping mode '" + mode + "'");
}

[[nodiscard]] inline GroupingSpec read_grouping_json(const std::string& path) {
    return grouping_from_json(detail::read_json_file(path));
}

/// Serializes a scenario to the JSON layout scenario_from_json accepts.
[[nodiscard]] inline json scenario_to_json(const ScenarioSpec& spec) {
    json doc;
    switch (spec.design) {
        case ScenarioSpec::Design::SplitVisits: doc["design"] = "split_visits"; break;
        case ScenarioSpec::Design::SharedBaseline: doc["design"] = "shared_baseline"; break;
        case ScenarioSpec::Design::HeteroTwoVisit: doc["design"] = "hetero_two_visit"; break;
    }
    doc["n"] = spec.n;
    doc["seed"] = spec.seed;
    doc["beta"] = detail::vector_to_json(spec.beta_true);
    if (spec.design == ScenarioSpec::Design::HeteroTwoVisit) {
        doc["sigma_1"] = spec.sigma_1;
        doc["sigma_2"] = spec.sigma_2;
    } else {
        if (spec.design == ScenarioSpec::Design::SplitVisits) {
            doc["fraction_135"] = spec.fraction_135;
        }
        doc["random_effect"] = spec.random_effect == ScenarioSpec::RandomEffect::Gaussian
                                   ? "normal"
                                   : "centered_exponential";
        doc["process"] = spec.process == ScenarioSpec::SerialProcess::Ar1 ? "ar1" : "ma1";
        doc["sigma_u2"] = spec.sigma_u2;
        doc["sigma_w2"] = spec.sigma_w2;
        doc["sigma_e2"] = spec.sigma_e2;
        if (spec.process == ScenarioSpec::SerialProcess::Ar1) {
            doc["phi"] = spec.phi;
        } else {
            doc["ma_theta"] = spec.ma_theta;
        }
    }
    return doc;
}

/// Parses a scenario document. Unknown fields are rejected so typos
/// cannot silently fall back to defaults.
[[nodiscard]] inline ScenarioSpec scenario_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaError("scenario document must be a JSON object");
    detail::require_keys(doc,
                         {"design", "n", "seed", "beta", "fraction_135", "random_effect",
                          "process", "sigma_u2", "sigma_w2", "sigma_e2", "phi", "ma_theta",
                          "sigma_1", "sigma_2"},
                         "scenario");
    ScenarioSpec spec;
    if (doc.contains("design")) {
        const std::string design = doc.at("design").is_string()
                                       ? doc.at("design").get<std::string>()
                                       : throw SchemaError("field 'design' must be a string");
        if (design == "split_visits") {
            spec.design = ScenarioSpec::Design::SplitVisits;
        } else if (design == "shared_baseline") {
            spec.design = ScenarioSpec::Design::SharedBaseline;
        } else if (design == "hetero_two_visit") {
            spec.design = ScenarioSpec::Design::HeteroTwoVisit;
        } else {
            throw SchemaError("unknown design '" + design + "'");
        }
    }
    if (doc.contains("n")) {
        if (!doc.at("n").is_number_integer()) {
            throw SchemaError("field 'n' must be an integer");
        }
        spec.n = doc.at("n").get<int>();
    }
    if (doc.contains("seed")) {
        if (!doc.at("seed").is_number_unsigned() && !doc.at("seed").is_number_integer()) {
            throw SchemaError("field 'seed' must be an integer");
        }
        spec.seed = doc.at("seed").get<std::uint64_t>();
    }
    if (doc.contains("beta")) {
        if (!doc.at("beta").is_array() || doc.at("beta").size() != 2) {
            throw SchemaError("field 'beta' must be an array of two numbers");
        }
        spec.beta_true.resize(2);
        spec.beta_true(0) = doc.at("beta").at(0).get<double>();
        spec.beta_true(1) = doc.at("beta").at(1).get<double>();
    }
    if (doc.contains("random_effect")) {
        const std::string re = doc.at("random_effect").get<std::string>();
        if (re == "normal") {
            spec.random_effect = ScenarioSpec::RandomEffect::Gaussian;
        } else if (re == "centered_exponential") {
            spec.random_effect = ScenarioSpec::RandomEffect::CenteredExponential;
        } else {
            throw SchemaError("unknown random_effect '" + re + "'");
        }
    }
    if (doc.contains("process")) {
        const std::string process = doc.at("process").get<std::string>();
        if (process == "ar1") {
            spec.process = ScenarioSpec::SerialProcess::Ar1;
        } else if (process == "ma1") {
            spec.process = ScenarioSpec::SerialProcess::Ma1;
        } else {
            throw SchemaError("unknown process '" + process + "'");
        }
    }
    spec.fraction_135 = detail::get_number(doc, "fraction_135", spec.fraction_135, "scenario");
    spec.sigma_u2 = detail::get_number(doc, "sigma_u2", spec.sigma_u2, "scenario");
    spec.sigma_w2 = detail::get_number(doc, "sigma_w2", spec.sigma_w2, "scenario");
    spec.sigma_e2 = detail::get_number(doc, "sigma_e2", spec.sigma_e2, "scenario");
    spec.phi = detail::get_number(doc, "phi", spec.phi, "scenario");
    spec.ma_theta = detail::get_number(doc, "ma_theta", spec.ma_theta, "scenario");
    spec.sigma_1 = detail::get_number(doc, "sigma_1", spec.sigma_1, "scenario");
    spec.sigma_2 = detail::get_number(doc, "sigma_2", spec.sigma_2, "scenario");
    spec.validate();
    return spec;
}

[[nodiscard]] inline ScenarioSpec read_scenario_json(const std::string& path) {
    return scenario_from_json(detail::read_json_file(path));
}

/// Serializes a fit for reporting: coefficients, standard errors, the
/// covariance classes keyed by (j, k, l), convergence bookkeeping and
/// (optionally) the full trace. `model_name` is a display label.
[[nodiscard]] inline json fit_result_to_json(const FitResult& fit,
                                             const std::string& model_name,
                                             int n_subjects, int n_observations,
                                             bool include_trace = false) {
    json doc;
    doc["kind"] = "fit_result";
    doc["model"] = model_name;
    doc["n_subjects"] = n_subjects;
    doc["n_observations"] = n_observations;
    doc["converged"] = fit.converged;
    doc["steps_to_converge"] =
        fit.steps_to_converge ? json(*fit.steps_to_converge) : json(nullptr);
    doc["rate_estimate"] = fit.rate_estimate ? json(*fit.rate_estimate) : json(nullptr);
    doc["beta"] = detail::vector_to_json(fit.beta_hat);
    doc["standard_errors"] = detail::vector_to_json(fit.standard_errors());
    doc["beta_covariance"] = detail::matrix_to_json(fit.beta_cov);
    json v = json::array();
    for (size_t r = 0; r < fit.v_keys.size(); ++r) {
        const CovKey& key = fit.v_keys[r];
        v.push_back(json{{"j", key.j},
                         {"k", key.k},
                         {"l", key.l},
                         {"value", fit.v_hat(static_cast<int>(r))}});
    }
    doc["v"] = std::move(v);
    doc["final_criterion"] =
        fit.trace.empty() ? json(nullptr) : detail::finite_or_null(fit.trace.back().criterion);
    if (include_trace) {
        json trace = json::array();
        for (const auto& entry : fit.trace) {
            json t;
            t["iteration"] = entry.iteration;
            t["beta"] = entry.beta.size() > 0 ? detail::vector_to_json(entry.beta)
                                              : json(nullptr);
            t["v"] = detail::vector_to_json(entry.v);
            t["criterion"] = detail::finite_or_null(entry.criterion);
            trace.push_back(std::move(t));
        }
        doc["trace"] = std::move(trace);
    }
    return doc;
}

/// Serializes a Monte Carlo summary together with the scenario that
/// produced it. Sample covariances are omitted when fewer than two runs
/// contributed.
[[nodiscard]] inline json mc_summary_to_json(const McSummary& summary,
                                             const ScenarioSpec& spec) {
    json doc;
    doc["kind"] = "mc_summary";
    doc["scenario"] = scenario_to_json(spec);
    doc["n_rep"] = summary.n_rep;
    json estimators = json::object();
    for (const auto& [which, es] : summary.estimators) {
        json block;
        block["runs_used"] = es.runs_used;
        block["mean"] = detail::vector_to_json(es.mean);
        if (es.runs_used > 1) block["covariance"] = detail::matrix_to_json(es.covariance);
        estimators[estimator_name(which)] = std::move(block);
    }
    doc["estimators"] = std::move(estimators);
    json histogram = json::array();
    for (const auto& [steps, count] : summary.step_histogram) {
        histogram.push_back(json::array({steps, count}));
    }
    doc["step_histogram"] = std::move(histogram);
    doc["exact_blue_covariance"] = detail::matrix_to_json(summary.exact_blue);
    doc["n_not_converged"] = summary.n_not_converged;
    doc["n_failed"] = summary.n_failed;
    return doc;
}

inline void write_json_file(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Text tables: render previously serialized documents, no recomputation.
// ---------------------------------------------------------------------------

namespace detail {

[[nodiscard]] inline std::string format_number(double value, int precision = 6) {
    std::ostringstream out;
    out << std::setprecision(precision) << value;
    return out.str();
}

[[nodiscard]] inline std::string format_cell(const json& value) {
    if (value.is_null()) return "-";
    if (value.is_number()) return format_number(value.get<double>());
    if (value.is_boolean()) return value.get<bool>() ? "yes" : "no";
    if (value.is_string()) return value.get<std::string>();
    return value.dump();
}

/// Renders rows as space-padded columns, two spaces between columns.
[[nodiscard]] inline std::string align_columns(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const auto& row : rows) {
        if (row.size() > widths.size()) widths.resize(row.size(), 0);
        for (size_t c = 0; c < row.size(); ++c) {
            widths[c] = std::max(widths[c], row[c].size());
        }
    }
    std::ostringstream out;
    for (const auto& row : rows) {
        std::string line;
        for (size_t c = 0; c < row.size(); ++c) {
            std::string cell = row[c];
            cell.resize(widths[c], ' ');
            line += cell;
            if (c + 1 < row.size()) line += "  ";
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << "\n";
    }
    return out.str();
}

[[nodiscard]] inline const json& require_field(const json& doc, const std::string& key,
                                               const std::string& where) {
    if (!doc.contains(key)) {
        throw SchemaError("missing field '" + key + "' in " + where);
    }
    return doc.at(key);
}

[[nodiscard]] inline std::string render_matrix_block(const json& matrix,
                                                     const std::string& where) {
    if (!matrix.is_array()) throw SchemaError(where + " must be an array of rows");
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : matrix) {
        std::vector<std::string> cells;
        for (const auto& value : row) cells.push_back(format_cell(value));
        rows.push_back(std::move(cells));
    }
    return align_columns(rows);
}

}  // namespace detail

/// Renders a fit-result document as aligned text tables.
[[nodiscard]] inline std::string render_fit_report(const json& doc) {
    std::ostringstream out;
    const json& beta = detail::require_field(doc, "beta", "fit result");
    const json& se = detail::require_field(doc, "standard_errors", "fit result");
    if (!beta.is_array() || !se.is_array() || beta.size() != se.size()) {
        throw SchemaError("fields 'beta' and 'standard_errors' must be arrays of equal length");
    }
    out << "model: " << detail::format_cell(detail::require_field(doc, "model", "fit result"))
        << "   subjects: "
        << detail::format_cell(detail::require_field(doc, "n_subjects", "fit result"))
        << "   observations: "
        << detail::format_cell(detail::require_field(doc, "n_observations", "fit result"))
        << "\n\n";

    std::vector<std::vector<std::string>> coef_rows;
    coef_rows.push_back({"coefficient", "estimate", "std.error"});
    for (size_t q = 0; q < beta.size(); ++q) {
        coef_rows.push_back({"beta_" + std::to_string(q), detail::format_cell(beta.at(q)),
                             detail::format_cell(se.at(q))});
    }
    out << detail::align_columns(coef_rows) << "\n";

    const json& v = detail::require_field(doc, "v", "fit result");
    if (!v.is_array()) throw SchemaError("field 'v' must be an array");
    std::vector<std::vector<std::string>> v_rows;
    v_rows.push_back({"(j, k, l)", "covariance"});
    for (const auto& entry : v) {
        const std::string key = "(" + detail::format_cell(detail::require_field(entry, "j", "v entry")) +
                                ", " + detail::format_cell(detail::require_field(entry, "k", "v entry")) +
                                ", " + detail::format_cell(detail::require_field(entry, "l", "v entry")) +
                                ")";
        v_rows.push_back({key, detail::format_cell(detail::require_field(entry, "value", "v entry"))});
    }
    out << detail::align_columns(v_rows) << "\n";

    const json& converged = detail::require_field(doc, "converged", "fit result");
    out << "converged: " << detail::format_cell(converged)
        << "   steps: " << detail::format_cell(detail::require_field(doc, "steps_to_converge", "fit result"))
        << "   rate estimate: "
        << detail::format_cell(detail::require_field(doc, "rate_estimate", "fit result"))
        << "   final criterion: "
        << detail::format_cell(detail::require_field(doc, "final_criterion", "fit result"))
        << "\n";
    return out.str();
}

/// Renders a Monte Carlo summary document as aligned text tables:
/// step-count percentages, simulated means, then covariance blocks with
/// the exact benchmark. Moment blocks are omitted when absent
/// (single-replication runs).
[[nodiscard]] inline std::string render_mc_report(const json& doc) {
    std::ostringstream out;
    const int n_rep = detail::require_field(doc, "n_rep", "summary").get<int>();
    out << "replications: " << n_rep
        << "   not converged: "
        << detail::format_cell(detail::require_field(doc, "n_not_converged", "summary"))
        << "   failed: " << detail::format_cell(detail::require_field(doc, "n_failed", "summary"))
        << "\n\n";

    const json& histogram = detail::require_field(doc, "step_histogram", "summary");
    if (!histogram.is_array()) throw SchemaError("field 'step_histogram' must be an array");
    if (!histogram.empty()) {
        int total = 0;
        for (const auto& pair : histogram) total += pair.at(1).get<int>();
        std::vector<std::string> steps_row{"steps"}, pct_row{"% of runs"};
        for (const auto& pair : histogram) {
            steps_row.push_back(detail::format_cell(pair.at(0)));
            pct_row.push_back(detail::format_number(
                100.0 * pair.at(1).get<double>() / std::max(total, 1), 3));
        }
        out << "steps to converge:\n"
            << detail::align_columns({steps_row, pct_row}) << "\n";
    }

    const json& estimators = detail::require_field(doc, "estimators", "summary");
    if (!estimators.is_object()) throw SchemaError("field 'estimators' must be an object");

    bool any_mean = false;
    std::vector<std::vector<std::string>> mean_rows;
    mean_rows.push_back({"estimator", "mean(beta_0)", "mean(beta_1)", "runs"});
    for (const auto& [name, block] : estimators.items()) {
        const json& mean = detail::require_field(block, "mean", "estimator block");
        if (!mean.is_array() || mean.size() < 2) continue;
        mean_rows.push_back({name, detail::format_cell(mean.at(0)),
                             detail::format_cell(mean.at(1)),
                             detail::format_cell(detail::require_field(block, "runs_used",
                                                                       "estimator block"))});
        any_mean = true;
    }
    if (any_mean && n_rep > 1) {
        out << "simulated means:\n" << detail::align_columns(mean_rows) << "\n";
    }

    if (n_rep > 1) {
        for (const auto& [name, block] : estimators.items()) {
            if (!block.contains("covariance")) continue;
            out << "simulated covariance (" << name << "):\n"
                << detail::render_matrix_block(block.at("covariance"), "covariance") << "\n";
        }
    }
    out << "exact benchmark covariance (true-weight least squares):\n"
        << detail::render_matrix_block(
               detail::require_field(doc, "exact_blue_covariance", "summary"),
               "exact_blue_covariance");
    return out.str();
}

/// Renders any known document kind; the dispatcher for the report
/// command.
[[nodiscard]] inline std::string render_report(const json& doc) {
    if (!doc.is_object()) throw SchemaError("report input must be a JSON object");
    const std::string kind =
        detail::require_field(doc, "kind", "report input").get<std::string>();
    if (kind == "fit_result") return render_fit_report(doc);
    if (kind == "mc_summary") return render_mc_report(doc);
    throw SchemaError("unknown document kind '" + kind + "'");
}

}  // namespace iee
