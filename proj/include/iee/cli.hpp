#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "iee/dataset.hpp"
#include "iee/errors.hpp"
#include "iee/iee_driver.hpp"
#include "iee/io.hpp"
#include "iee/mean_model.hpp"
#include "iee/simulation.hpp"

namespace iee::cli {

/// Exit codes: scripts need to tell "the fit did not converge" (a
/// statistical outcome with a usable report) from bad inputs and from
/// numerical breakdowns.
enum ExitCode : int {
    kSuccess = 0,
    kInvalidInput = 1,
    kNotConverged = 2,
    kNumericalFailure = 3,
};

namespace detail {

[[nodiscard]] inline int exit_code_for(const Error& err) {
    if (dynamic_cast<const NewtonSingular*>(&err) != nullptr ||
        dynamic_cast<const NewtonDiverged*>(&err) != nullptr ||
        dynamic_cast<const SingularInformation*>(&err) != nullptr ||
        dynamic_cast<const IndefiniteCovariance*>(&err) != nullptr ||
        dynamic_cast<const NonFiniteValue*>(&err) != nullptr ||
        dynamic_cast<const FitIterationError*>(&err) != nullptr) {
        return kNumericalFailure;
    }
    return kInvalidInput;
}

struct FitConfig {
    std::string data_path;
    std::string grouping_path;
    std::string model = "linear";
    double sigma = 1.0;
    int quadrature_order = 20;
    double tol = IeeOptions{}.conv_tol;
    int max_iters = IeeOptions{}.max_outer_iters;
    bool one_step = false;
    std::string out_path;
    bool table = false;
    bool trace = false;
};

struct SimulateConfig {
    std::string spec_path;
    int reps = 1000;
    std::vector<std::string> estimators{"ols", "irls", "onestep"};
    std::string out_path;
    std::string dump_data_path;
};

struct ReportConfig {
    std::string in_path;
    bool table = true;
};

[[nodiscard]] inline int run_fit(const FitConfig& config) {
    const LongitudinalDataset ds = read_dataset_csv(config.data_path);
    const GroupingSpec grouping_spec = read_grouping_json(config.grouping_path);
    const CovarianceGrouping grouping = build_grouping(ds, grouping_spec);
    const MeanModel model =
        config.model == "linear"
            ? MeanModel::linear()
            : MeanModel::logistic_random_intercept(config.sigma, config.quadrature_order);

    IeeOptions opts;
    opts.conv_tol = config.tol;
    opts.max_outer_iters = config.max_iters;
    opts.one_step_only = config.one_step;

    const FitResult fit = fit_iee(ds, model, grouping, opts);
    const json doc = fit_result_to_json(fit, config.model, ds.subject_count(),
                                        ds.total_observations(), config.trace);
    write_json_file(doc, config.out_path);
    if (config.table) std::cout << render_fit_report(doc);
    return fit.converged ? kSuccess : kNotConverged;
}

[[nodiscard]] inline int run_simulate(const SimulateConfig& config) {
    const ScenarioSpec spec = read_scenario_json(config.spec_path);
    std::vector<Estimator> estimators;
    for (const std::string& name : config.estimators) {
        if (name == "ols") {
            estimators.push_back(Estimator::Ols);
        } else if (name == "irls") {
            estimators.push_back(Estimator::Irls);
        } else if (name == "onestep") {
            estimators.push_back(Estimator::OneStep);
        } else {
            throw ValidationError("unknown estimator '" + name +
                                  "' (expected ols, irls or onestep)");
        }
    }
    const McSummary summary = monte_carlo(spec, config.reps, estimators);
    write_json_file(mc_summary_to_json(summary, spec), config.out_path);
    if (!config.dump_data_path.empty()) {
        write_dataset_csv(generate(spec, 0).first, config.dump_data_path);
    }
    return kSuccess;
}

[[nodiscard]] inline int run_report(const ReportConfig& config) {
    const json doc = read_json_file(config.in_path);
    std::cout << render_report(doc);
    return kSuccess;
}

}  // namespace detail

/// Builds and runs the command-line interface. Returns the process exit
/// code; all error reporting goes to stderr.
[[nodiscard]] inline int run(int argc, const char* const* argv) {
    CLI::App app{"Iteratively reweighted fitting for unbalanced longitudinal data:\n"
                 "alternate an estimating-equation solve for the regression\n"
                 "coefficients with method-of-moments covariance estimation."};
    app.require_subcommand(1);

    detail::FitConfig fit;
    CLI::App* fit_cmd = app.add_subcommand(
        "fit", "Fit a model to a CSV dataset (header: subject,visit,y,x1,...)");
    fit_cmd->add_option("--data", fit.data_path, "Input CSV path")
        ->required()
        ->check(CLI::ExistingFile);
    fit_cmd->add_option("--grouping", fit.grouping_path,
                        "Covariance-grouping JSON path")
        ->required()
        ->check(CLI::ExistingFile);
    fit_cmd->add_option("--model", fit.model, "Mean model")
        ->check(CLI::IsMember({"linear", "logistic-ri"}))
        ->capture_default_str();
    fit_cmd->add_option("--sigma", fit.sigma,
                        "Random-intercept standard deviation (logistic-ri)")
        ->capture_default_str();
    fit_cmd->add_option("--quad-order", fit.quadrature_order,
                        "Quadrature order for the marginal logistic mean (logistic-ri)")
        ->capture_default_str();
    fit_cmd->add_option("--tol", fit.tol, "Convergence tolerance for the outer iteration")
        ->capture_default_str();
    fit_cmd->add_option("--max-iters", fit.max_iters, "Outer iteration budget")
        ->capture_default_str();
    fit_cmd->add_flag("--one-step", fit.one_step,
                      "Stop after one covariance update and one refit");
    fit_cmd->add_option("--out", fit.out_path, "Output JSON path")->required();
    fit_cmd->add_flag("--table", fit.table, "Also print the report as a text table");
    fit_cmd->add_flag("--trace", fit.trace, "Include the full iteration trace in the JSON");

    detail::SimulateConfig sim;
    CLI::App* sim_cmd = app.add_subcommand(
        "simulate", "Run a seeded Monte Carlo comparison of estimators");
    sim_cmd->add_option("--spec", sim.spec_path, "Scenario JSON path")
        ->required()
        ->check(CLI::ExistingFile);
    sim_cmd->add_option("--reps", sim.reps, "Number of replications")
        ->capture_default_str();
    sim_cmd->add_option("--estimators", sim.estimators,
                        "Comma-separated estimators: ols,irls,onestep")
        ->delimiter(',');
    sim_cmd->add_option("--out", sim.out_path, "Output JSON path")->required();
    sim_cmd->add_option("--dump-data", sim.dump_data_path,
                        "Also write one replication's dataset to this CSV path");

    detail::ReportConfig report;
    CLI::App* report_cmd = app.add_subcommand(
        "report", "Render a previously written JSON result as text tables");
    report_cmd->add_option("--in", report.in_path, "Result JSON path")
        ->required()
        ->check(CLI::ExistingFile);
    report_cmd->add_flag("--table", report.table,
                         "Render as text tables (the default and only format)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kSuccess : kInvalidInput;
    }

    try {
        if (fit_cmd->parsed()) return detail::run_fit(fit);
        if (sim_cmd->parsed()) return detail::run_simulate(sim);
        return detail::run_report(report);
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return detail::exit_code_for(err);
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return kNumericalFailure;
    }
}

}  // namespace iee::cli
