#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"

namespace {

void setup_logging()
{
    auto logger = spdlog::stderr_color_st("amirl");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("AMIRL_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to off
        if (level != spdlog::level::off || std::string(env) == "off") {
            spdlog::set_level(level);
        } else {
            spdlog::warn("AMIRL_LOG='{}' not recognised; using warn", env);
        }
    }
}

/// Fills options not given on the command line from a `key = value` file.
/// Keys are long option names with '_' for '-'.
void apply_config(CLI::App& sub, const std::string& path)
{
    if (!std::filesystem::is_regular_file(path)) {
        throw amirl::ConfigError("cannot read config file '" + path + "'");
    }
    const auto items = CLI::ConfigTOML().from_file(path);
    for (const auto& item : items) {
        if (!item.parents.empty() || item.name == "++" || item.name == "--") {
            throw amirl::ConfigError("config sections are not supported ('" + item.fullname() + "')");
        }
        std::string name = item.name;
        std::replace(name.begin(), name.end(), '_', '-');
        CLI::Option* op = sub.get_option_no_throw(name.size() == 1 ? "-" + name : "--" + name);
        if (op == nullptr || name == "config") {
            throw amirl::ConfigError("unknown config key '" + item.name + "'");
        }
        if (op->count() > 0) {
            continue;
        }
        for (const auto& v : item.inputs) {
            op->add_result(v);
        }
        op->run_callback();
    }
}

void add_window(CLI::App& app, amirl::cli::WindowOptions& o)
{
    auto* sub = app.add_subcommand("select-window", "Rank balanced windows of a long-format panel");
    sub->add_option("input", o.input, "Long CSV with columns unit, year, variable, value")->required();
    sub->add_option("--min-length", o.min_length, "Shortest window, in periods")->capture_default_str();
    sub->add_option("--slack", o.slack, "Relative panel-size tolerance when preferring longer windows")
        ->capture_default_str();
    sub->add_option("--require", o.require, "Variables that must be observed and non-zero");
    sub->add_option("--top", o.top, "Rows to print (0 = all)")->capture_default_str();
    sub->add_option("--emit-balanced", o.emit_balanced, "Write the top window as a wide CSV");
}

void add_fit(CLI::App& app, amirl::cli::FitOptions& o)
{
    auto* sub = app.add_subcommand("fit", "Run aMIRL, pooled MIRL or the lasso-OLS baseline");
    sub->add_option("--config", o.config, "Key-value config file (see docs/config.md)");
    sub->add_option("input", o.input, "Balanced wide CSV")->required();
    sub->add_option("--target", o.target, "Target variable");
    sub->add_option("--exclude", o.exclude, "Variables kept out of the regressor set");
    sub->add_flag("--exclude-target-derived", o.exclude_target_derived,
                  "Exclude regressors nearly identical to the target");
    sub->add_option("--derived-threshold", o.derived_threshold, "|r| at which a regressor counts as target-derived")
        ->capture_default_str();
    sub->add_option("--mode", o.mode, "amirl, mirl or lasso-ols")->capture_default_str();
    sub->add_option("--criterion", o.criterion, "bic, aic, cp or all")->capture_default_str();
    sub->add_option("-M,--imputations", o.M, "Completed data sets")->capture_default_str();
    sub->add_option("-B,--bootstrap", o.B, "Bootstrap samples per data set")->capture_default_str();
    sub->add_option("--cycles", o.cycles, "Chained-equation cycles")->capture_default_str();
    sub->add_option("--seed", o.seed, "Base seed")->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads; results do not depend on it")->capture_default_str();
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--unit-column", o.unit_column)->capture_default_str();
    sub->add_option("--time-column", o.time_column)->capture_default_str();
    sub->add_option("--candidate-fraction", o.candidate_fraction)->capture_default_str();
    sub->add_option("--grid-size", o.grid_size)->capture_default_str();
    sub->add_option("--grid-delta", o.grid_delta, "lambda_min / lambda_max")->capture_default_str();
    sub->add_option("--score-imputed-target", o.score_imputed_target)->capture_default_str();
    sub->add_option("--intervals", o.intervals, "BCa intervals for the stable set")->capture_default_str();
    sub->add_option("--bca-resamples", o.bca_resamples)->capture_default_str();
    sub->add_option("--ci-level", o.ci_level)->capture_default_str();
    sub->add_option("--clip-bounded", o.clip_bounded)->capture_default_str();
    sub->add_option("--tree-max-depth", o.tree_max_depth)->capture_default_str();
    sub->add_option("--tree-min-leaf", o.tree_min_leaf)->capture_default_str();
    sub->add_option("--tree-complexity", o.tree_complexity)->capture_default_str();
    sub->add_option("--tree-validation-pruning", o.tree_validation_pruning)->capture_default_str();
    sub->add_option("--tree-validation-fraction", o.tree_validation_fraction)->capture_default_str();
    sub->add_option("--reem-tolerance", o.reem_tolerance)->capture_default_str();
    sub->add_option("--reem-max-iter", o.reem_max_iter)->capture_default_str();
    sub->add_flag("--write-imputed", o.write_imputed, "Also write imputed.csv");
}

void add_simulate(CLI::App& app, amirl::cli::SimulateOptions& o)
{
    auto& s = o.spec;
    auto* sub = app.add_subcommand("simulate", "Generate a synthetic fixed-effects panel with known truth");
    sub->add_option("--N", s.N, "Units")->capture_default_str();
    sub->add_option("--T", s.T, "Periods")->capture_default_str();
    sub->add_option("--p", s.p, "Covariates")->capture_default_str();
    sub->add_option("--support", o.support, "Signal covariates, numbered from 1")->delimiter(',');
    sub->add_option("--beta", s.beta, "Signal coefficients")->delimiter(',');
    sub->add_option("--sigma-alpha", s.sigma_alpha)->capture_default_str();
    sub->add_option("--sigma-eps", s.sigma_eps)->capture_default_str();
    sub->add_option("--block-size", s.block_size)->capture_default_str();
    sub->add_option("--rho", s.rho, "Within-block correlation")->capture_default_str();
    sub->add_option("--block-rho", s.block_rho, "Per-block correlations")->delimiter(',');
    sub->add_option("--missing-rate", s.missing_rate)->capture_default_str();
    sub->add_option("--mar-strength", s.mar_strength)->capture_default_str();
    sub->add_flag("--mask-target", s.mask_target, "Allow missing target cells");
    sub->add_option("--n-binary", s.n_binary, "Trailing covariates dichotomized at 0")->capture_default_str();
    sub->add_option("--seed", s.seed)->capture_default_str();
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
}

void add_evaluate(CLI::App& app, amirl::cli::EvaluateOptions& o)
{
    auto* sub = app.add_subcommand("evaluate", "Score a report against simulated truth");
    sub->add_option("report", o.report, "report.json from fit")->required();
    sub->add_option("truth", o.truth, "truth.json from simulate")->required();
    sub->add_flag("--json", o.json_output, "Print metrics as JSON");
}

} // namespace

int main(int argc, char** argv)
{
    setup_logging();
    CLI::App app{"Panel variable selection with multiple imputation and random lasso"};
    app.require_subcommand(1);
    app.set_version_flag("--version", amirl::report::tool_version);

    amirl::cli::WindowOptions window;
    amirl::cli::FitOptions fit;
    amirl::cli::SimulateOptions sim;
    amirl::cli::EvaluateOptions eval;
    add_window(app, window);
    add_fit(app, fit);
    add_simulate(app, sim);
    add_evaluate(app, eval);

    try {
        app.parse(argc, argv);
        if (!fit.config.empty()) {
            apply_config(*app.get_subcommand("fit"), fit.config);
        }
    } catch (const amirl::ConfigError& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(e.kind());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(amirl::ErrorKind::config);
    }

    try {
        if (app.got_subcommand("select-window")) {
            return amirl::cli::select_window(window, std::cout);
        }
        if (app.got_subcommand("fit")) {
            return amirl::cli::fit(fit, std::cout);
        }
        if (app.got_subcommand("simulate")) {
            return amirl::cli::simulate(sim, std::cout);
        }
        return amirl::cli::evaluate(eval, std::cout);
    } catch (const amirl::Error& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return 1;
    }
}
