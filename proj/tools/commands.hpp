#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "amirl/amirl.hpp"

namespace amirl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct WindowOptions {
    std::string input;
    int min_length = 2;
    double slack = 0.01;
    std::vector<std::string> require;
    int top = 0;  // 0 = all
    std::string emit_balanced;
};

struct FitOptions {
    std::string input;
    std::string config;
    std::string unit_column = "unit";
    std::string time_column = "year";
    std::string target;
    std::vector<std::string> exclude;
    bool exclude_target_derived = false;
    double derived_threshold = 0.95;
    std::string mode = "amirl";
    std::string criterion = "aic";
    int M = 10;
    int B = 100;
    int cycles = 20;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out = ".";
    double candidate_fraction = 1.0 / 3.0;
    int grid_size = 100;
    double grid_delta = 0.001;
    bool score_imputed_target = true;
    bool intervals = true;
    int bca_resamples = 1000;
    double ci_level = 0.95;
    bool clip_bounded = true;
    int tree_max_depth = 10;
    long tree_min_leaf = 5;
    double tree_complexity = 0.01;
    bool tree_validation_pruning = true;
    double tree_validation_fraction = 0.2;
    double reem_tolerance = 1e-4;
    int reem_max_iter = 50;
    bool write_imputed = false;
};

struct SimulateOptions {
    datagen::ScenarioSpec spec;
    std::vector<long> support;  // 1-based covariate numbers
    std::string out = ".";
};

struct EvaluateOptions {
    std::string report;
    std::string truth;
    bool json_output = false;
};

namespace detail {

inline void require_file(const std::string& path)
{
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw InputError("cannot read '" + path + "'");
    }
}

inline void make_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw InputError("cannot create '" + dir.string() + "': " + ec.message());
    }
}

inline json read_json(const std::string& path)
{
    require_file(path);
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("'" + path + "' is not valid JSON: " + e.what());
    }
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn)
{
    std::ostringstream os;
    fn(os);
    report::write_text(path.string(), os.str());
    spdlog::debug("wrote {}", path.string());
}

inline std::string fixed(double v, int digits = 4)
{
    if (!std::isfinite(v)) {
        return "NA";
    }
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

/// Pairwise-complete correlation of every covariate with the target.
inline std::vector<Index> target_derived(const PanelDataset& data, double threshold)
{
    const Index t = data.target_index();
    std::vector<Index> out;
    for (Index k : data.regressor_indices()) {
        std::vector<Index> rows;
        for (Index r = 0; r < data.n_rows(); ++r) {
            if (data.mask(r, t) && data.mask(r, k)) {
                rows.push_back(r);
            }
        }
        if (rows.size() < 3) {
            continue;
        }
        const double r = imputation::detail::pearson(data.values, t, k, rows);
        if (std::isfinite(r) && std::abs(r) >= threshold) {
            out.push_back(k);
        }
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// select-window
// ---------------------------------------------------------------------------

inline int select_window(const WindowOptions& o, std::ostream& out)
{
    detail::require_file(o.input);
    const auto table = read_long_csv(o.input);
    if (table.empty()) {
        throw InputError("no data");
    }
    AvailabilityPredicate pred = any_nonzero();
    if (!o.require.empty()) {
        std::vector<Index> req;
        for (const auto& name : o.require) {
            const auto it = std::find(table.variables.begin(), table.variables.end(), name);
            if (it == table.variables.end()) {
                throw UnknownVariableError(name);
            }
            req.push_back(it - table.variables.begin());
        }
        pred = require_nonzero(req);
    }
    const auto windows = select_balanced_window(table, o.min_length, o.slack, pred);
    csv::write_row(out, {"rank", "start", "end", "length", "units", "panel_size"});
    const std::size_t shown = o.top > 0 ? std::min<std::size_t>(windows.size(), o.top) : windows.size();
    for (std::size_t i = 0; i < shown; ++i) {
        const auto& w = windows[i];
        csv::write_row(out, {std::to_string(i + 1), std::to_string(w.start_year), std::to_string(w.end_year),
                             std::to_string(w.length()), std::to_string(w.n_units),
                             std::to_string(w.panel_size)});
    }
    if (!o.emit_balanced.empty()) {
        const auto panel = extract_window(table, windows.front(), pred);
        detail::write_file(o.emit_balanced, [&](std::ostream& os) { write_wide_csv(os, panel); });
        spdlog::info("balanced panel {}-{}: {} units, {} rows", windows.front().start_year,
                     windows.front().end_year, panel.n_units(), panel.n_rows());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

inline pipeline::PipelineConfig pipeline_config(const FitOptions& o)
{
    pipeline::PipelineConfig cfg;
    cfg.mode = pipeline::parse_mode(o.mode);
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    cfg.score_imputed_target = o.score_imputed_target;
    cfg.intervals = o.intervals;
    cfg.bca_resamples = o.bca_resamples;
    cfg.ci_level = o.ci_level;

    auto& im = cfg.imputation;
    im.M = o.M;
    im.cycles = o.cycles;
    im.clip_bounded = o.clip_bounded;
    im.reem.tree.max_depth = o.tree_max_depth;
    im.reem.tree.min_leaf = o.tree_min_leaf;
    im.reem.tree.complexity = o.tree_complexity;
    im.reem.tree.validation_pruning = o.tree_validation_pruning;
    im.reem.tree.validation_fraction = o.tree_validation_fraction;
    im.reem.tolerance = o.reem_tolerance;
    im.reem.max_iter = o.reem_max_iter;
    im.classification = im.reem.tree;

    auto& rl = cfg.random_lasso;
    rl.B = o.B;
    rl.candidate_fraction = o.candidate_fraction;
    rl.grid_size = o.grid_size;
    rl.grid_delta = o.grid_delta;
    cfg.propagate();

    if (o.threads < 1) {
        throw ConfigError("threads must be at least 1");
    }
    if (o.bca_resamples < inference::min_resamples) {
        throw ConfigError("bca_resamples must be at least " + std::to_string(inference::min_resamples));
    }
    if (!(o.ci_level > 0.0 && o.ci_level < 1.0)) {
        throw ConfigError("ci_level must lie in (0, 1)");
    }
    if (!(o.derived_threshold > 0.0 && o.derived_threshold <= 1.0)) {
        throw ConfigError("derived_threshold must lie in (0, 1]");
    }
    if (o.tree_max_depth < 1 || o.tree_min_leaf < 1 || o.tree_complexity < 0.0) {
        throw ConfigError("tree controls need max_depth >= 1, min_leaf >= 1, complexity >= 0");
    }
    if (!(o.tree_validation_fraction > 0.0 && o.tree_validation_fraction < 1.0)) {
        throw ConfigError("tree_validation_fraction must lie in (0, 1)");
    }
    im.validate();
    rl.validate();
    return cfg;
}

inline std::vector<lasso::Criterion> criteria_of(const std::string& s)
{
    if (s == "all") {
        return {lasso::Criterion::bic, lasso::Criterion::aic, lasso::Criterion::cp};
    }
    return {lasso::parse_criterion(s)};
}

/// Reads the panel and assigns target and excluded roles.
inline PanelDataset load_panel(const FitOptions& o)
{
    if (o.target.empty()) {
        throw ConfigError("no target given (--target or 'target' in the config file)");
    }
    detail::require_file(o.input);
    auto data = read_wide_csv(o.input, o.unit_column, o.time_column);
    data.variables[static_cast<std::size_t>(data.variable_index(o.target))].role = VariableRole::target;
    for (const auto& name : o.exclude) {
        const Index k = data.variable_index(name);
        if (data.variables[static_cast<std::size_t>(k)].role == VariableRole::target) {
            throw ConfigError("target '" + name + "' cannot be excluded");
        }
        data.variables[static_cast<std::size_t>(k)].role = VariableRole::excluded;
    }
    if (o.exclude_target_derived) {
        for (Index k : detail::target_derived(data, o.derived_threshold)) {
            auto& v = data.variables[static_cast<std::size_t>(k)];
            v.role = VariableRole::excluded;
            spdlog::info("excluding '{}': |r| with target >= {}", v.name, o.derived_threshold);
        }
    }
    if (data.regressor_indices().empty()) {
        throw ConfigError("no candidate regressors left");
    }
    return data;
}

inline void write_fit_outputs(const fs::path& dir, const pipeline::PipelineResult& res, const PanelDataset& data,
                              const pipeline::PipelineConfig& cfg, const std::string& input)
{
    detail::make_dir(dir);
    detail::write_file(dir / "report.json", [&](std::ostream& os) {
        os << report::report_json(res, data, cfg, input).dump(2) << '\n';
    });
    detail::write_file(dir / "coefficients.csv",
                       [&](std::ostream& os) { report::write_coefficients_csv(os, res); });
    detail::write_file(dir / "stability.csv", [&](std::ostream& os) { report::write_stability_csv(os, res); });
    detail::write_file(dir / "diagnostics.csv",
                       [&](std::ostream& os) { report::write_diagnostics_csv(os, res.diagnostics, data); });
    const json info = {{"tool_version", report::tool_version},
                       {"threads", cfg.threads},
                       {"timings_seconds",
                        {{"imputation", res.timings.imputation},
                         {"selection", res.timings.selection},
                         {"intervals", res.timings.intervals}}},
                       {"finished_unix_seconds",
                        std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count()}};
    detail::write_file(dir / "run_info.json", [&](std::ostream& os) { os << info.dump(2) << '\n'; });
}

inline void print_summary(std::ostream& out, const pipeline::PipelineResult& res)
{
    out << "mode " << pipeline::to_string(res.mode) << ", criterion " << lasso::to_string(res.criterion) << ", "
        << res.n_units << " units x " << res.n_periods << " periods, " << res.regressors.size()
        << " candidate regressors\n";
    if (res.pi_hat.size() > 0) {
        out << "threshold pi* = " << detail::fixed(res.pi_star, 3) << '\n';
    }
    out << "selected " << res.stable_set.size() << ":";
    for (Index k : res.stable_set) {
        out << ' ' << res.regressors[static_cast<std::size_t>(k)] << '='
            << detail::fixed(res.b_final(k));
    }
    out << "\nR2 overall " << detail::fixed(res.fit.r2_overall) << " (adj " << detail::fixed(res.fit.r2_overall_adj)
        << "), within " << detail::fixed(res.fit.r2_within) << " (adj " << detail::fixed(res.fit.r2_within_adj)
        << ")\n";
}

inline int fit(const FitOptions& o, std::ostream& out)
{
    auto cfg = pipeline_config(o);
    const auto criteria = criteria_of(o.criterion);
    const auto data = load_panel(o);
    pipeline::check_input(data, cfg);
    spdlog::info("{} units, {} periods, {} variables, {} missing cells", data.n_units(), data.n_periods(),
                 data.n_vars(), (!data.mask).count());

    const auto t0 = std::chrono::steady_clock::now();
    const auto imputed = pipeline::impute(data, cfg);
    const double t_imp = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("imputation done in {:.1f}s", t_imp);

    const fs::path root(o.out);
    detail::make_dir(root);
    if (o.write_imputed && cfg.mode != pipeline::Mode::lasso_ols_meanimpute) {
        detail::write_file(root / "imputed.csv",
                           [&](std::ostream& os) { report::write_imputed_csv(os, data, imputed); });
    }
    for (auto c : criteria) {
        cfg.random_lasso.criterion = c;
        auto res = pipeline::fit_imputed(data, imputed, cfg);
        res.timings.imputation = t_imp;
        const fs::path dir = criteria.size() > 1 ? root / lasso::to_string(c) : root;
        write_fit_outputs(dir, res, data, cfg, o.input);
        print_summary(out, res);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int simulate(SimulateOptions o, std::ostream& out)
{
    auto& spec = o.spec;
    if (!o.support.empty()) {
        spec.support.clear();
        for (long s : o.support) {
            if (s < 1 || s > spec.p) {
                throw ConfigError("support index " + std::to_string(s) + " outside 1.." + std::to_string(spec.p));
            }
            spec.support.push_back(s - 1);
        }
    }
    spec.validate();
    const auto sc = datagen::generate(spec);
    const fs::path dir(o.out);
    detail::make_dir(dir);
    detail::write_file(dir / "panel.csv", [&](std::ostream& os) { write_wide_csv(os, sc.panel); });
    detail::write_file(dir / "truth.json",
                       [&](std::ostream& os) { os << datagen::truth_json(spec, sc.truth).dump(2) << '\n'; });
    const auto masked = sc.truth.masked.count();
    if (masked > 0) {
        detail::write_file(dir / "mask.csv", [&](std::ostream& os) {
            csv::write_row(os, {"unit", "year", "variable"});
            for (Index r = 0; r < sc.panel.n_rows(); ++r) {
                for (Index k = 0; k < sc.panel.n_vars(); ++k) {
                    if (sc.truth.masked(r, k)) {
                        csv::write_row(os, {sc.panel.unit_ids[sc.panel.row_unit[r]],
                                            std::to_string(sc.panel.time_points[sc.panel.row_time[r]]),
                                            sc.panel.variables[k].name});
                    }
                }
            }
        });
    }
    out << "wrote " << sc.panel.n_rows() << " rows (" << spec.N << " units x " << spec.T << " periods, " << spec.p
        << " covariates, " << masked << " masked cells) to " << dir.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct Evaluation {
    Index true_positives = 0;
    Index false_positives = 0;
    Index false_negatives = 0;
    Index selected = 0;
    Index support = 0;
    double rmse_support = 0.0;
    double rmse_all = 0.0;
    json fit;
};

inline Evaluation evaluate_reports(const json& rep, const json& truth)
{
    const json& result = rep.contains("result") ? rep.at("result") : rep;
    if (!result.contains("coefficients") || !truth.contains("beta")) {
        throw InputError("report needs 'coefficients' and truth needs 'beta'");
    }
    const auto& beta = truth.at("beta");
    std::vector<std::string> support = truth.at("support").get<std::vector<std::string>>();
    const auto& coefs = result.at("coefficients");
    if (coefs.size() != beta.size()) {
        throw InputError("report has " + std::to_string(coefs.size()) + " regressors, truth has " +
                         std::to_string(beta.size()));
    }
    Evaluation ev;
    ev.support = static_cast<Index>(support.size());
    double ss_support = 0.0;
    double ss_all = 0.0;
    for (const auto& c : coefs) {
        const auto name = c.at("variable").get<std::string>();
        if (!beta.contains(name)) {
            throw InputError("variable '" + name + "' not in truth");
        }
        const double b = beta.at(name).get<double>();
        const double e = c.at("b_final").get<double>() - b;
        const bool sel = c.at("selected").get<bool>();
        const bool real = std::find(support.begin(), support.end(), name) != support.end();
        ev.selected += sel ? 1 : 0;
        ev.true_positives += sel && real ? 1 : 0;
        ev.false_positives += sel && !real ? 1 : 0;
        ev.false_negatives += !sel && real ? 1 : 0;
        ss_all += e * e;
        if (real) {
            ss_support += e * e;
        }
    }
    ev.rmse_support = ev.support > 0 ? std::sqrt(ss_support / static_cast<double>(ev.support)) : 0.0;
    ev.rmse_all = std::sqrt(ss_all / static_cast<double>(coefs.size()));
    ev.fit = result.value("fit", json::object());
    return ev;
}

inline int evaluate(const EvaluateOptions& o, std::ostream& out)
{
    const auto ev = evaluate_reports(detail::read_json(o.report), detail::read_json(o.truth));
    if (o.json_output) {
        json j = {{"true_positives", ev.true_positives}, {"false_positives", ev.false_positives},
                  {"false_negatives", ev.false_negatives}, {"selected", ev.selected},
                  {"support", ev.support}, {"rmse_support", ev.rmse_support},
                  {"rmse_all", ev.rmse_all}, {"fit", ev.fit}};
        out << j.dump(2) << '\n';
        return 0;
    }
    auto stat = [&](const char* key) {
        return ev.fit.contains(key) && ev.fit.at(key).is_number() ? detail::fixed(ev.fit.at(key).get<double>())
                                                                  : std::string("NA");
    };
    out << "true_positives  " << ev.true_positives << '\n'
        << "false_positives " << ev.false_positives << '\n'
        << "false_negatives " << ev.false_negatives << '\n'
        << "selected        " << ev.selected << " of support " << ev.support << '\n'
        << "rmse_support    " << detail::fixed(ev.rmse_support) << '\n'
        << "rmse_all        " << detail::fixed(ev.rmse_all) << '\n'
        << "r2_overall      " << stat("r2_overall") << " (adj " << stat("r2_overall_adj") << ")\n"
        << "r2_within       " << stat("r2_within") << " (adj " << stat("r2_within_adj") << ")\n";
    return 0;
}

} // namespace amirl::cli
