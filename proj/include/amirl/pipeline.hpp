#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"
#include "amirl/inference.hpp"
#include "amirl/lasso.hpp"
#include "amirl/mice.hpp"
#include "amirl/panel.hpp"
#include "amirl/random_lasso.hpp"

namespace amirl::pipeline {

using Eigen::Index;
using lasso::Criterion;

enum class Mode { amirl, mirl_pooled, lasso_ols_meanimpute };

inline std::string to_string(Mode m)
{
    switch (m) {
    case Mode::amirl: return "amirl";
    case Mode::mirl_pooled: return "mirl_pooled";
    case Mode::lasso_ols_meanimpute: return "lasso_ols_meanimpute";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s)
{
    if (s == "amirl") {
        return Mode::amirl;
    }
    if (s == "mirl" || s == "mirl_pooled") {
        return Mode::mirl_pooled;
    }
    if (s == "lasso-ols" || s == "lasso_ols" || s == "lasso_ols_meanimpute") {
        return Mode::lasso_ols_meanimpute;
    }
    throw ConfigError("unknown mode '" + s + "' (expected amirl, mirl or lasso-ols)");
}

struct PipelineConfig {
    Mode mode = Mode::amirl;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    imputation::ImputationConfig imputation;
    stability::RandomLassoConfig random_lasso;
    /// Include rows with an imputed target when scoring thresholds.
    bool score_imputed_target = true;
    bool intervals = true;
    int bca_resamples = 1000;
    double ci_level = 0.95;

    /// Pushes the shared seed and thread count into the stage configs.
    void propagate()
    {
        imputation.seed = seed;
        imputation.threads = threads;
        random_lasso.seed = seed;
        random_lasso.threads = threads;
    }
};

struct StageTimings {
    double imputation = 0.0;
    double selection = 0.0;
    double intervals = 0.0;
};

/// Per-coefficient significance flags at the reported levels.
struct Significance {
    bool at_10 = false;
    bool at_05 = false;
    bool at_01 = false;
};

struct PipelineResult {
    Mode mode = Mode::amirl;
    Criterion criterion = Criterion::aic;
    std::string target;
    std::vector<std::string> regressors;
    Index n_units = 0;
    Index n_periods = 0;
    Index n_rows = 0;
    Index M = 0;

    // Standardized scale.
    Eigen::VectorXd b_init_std;
    Eigen::VectorXd b_final_std;
    // Original scale.
    Eigen::VectorXd b_init;
    Eigen::VectorXd b_final;
    std::vector<Index> stable_set;
    std::optional<double> intercept;  // pooled mode
    Eigen::VectorXd fixed_effects;    // fixed-effect modes

    // Selection detail; empty for the lasso-OLS baseline.
    Eigen::VectorXd pi_hat;
    double pi_star = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> threshold_candidates;
    std::vector<double> threshold_bic;
    std::vector<Index> threshold_k;
    bool empty_initial = false;
    Eigen::VectorXd importance;
    Eigen::MatrixXd importance_estimates;
    double lambda_max = 0.0;
    std::optional<double> lambda_selected;  // lasso-OLS baseline

    inference::FitStats fit;
    std::vector<inference::CoefficientInterval> intervals;  // stable set only
    std::vector<Significance> significance;
    std::vector<imputation::CorrelationRow> diagnostics;
    StageTimings timings;
};

namespace detail {

struct Design {
    std::vector<Index> columns;  // target first, then regressors
    Index target = -1;
    std::vector<Index> regressors;
};

inline Design design_of(const PanelDataset& data)
{
    Design d;
    d.target = data.target_index();
    d.regressors = data.regressor_indices();
    if (d.regressors.empty()) {
        throw ConfigError("no regressors left after exclusions");
    }
    d.columns.push_back(d.target);
    d.columns.insert(d.columns.end(), d.regressors.begin(), d.regressors.end());
    return d;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& v, const std::vector<Index>& cols)
{
    Eigen::MatrixXd out(v.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        out.col(static_cast<Index>(c)) = v.col(cols[c]);
    }
    return out;
}

/// Standardized (and, with fixed effects, unit-demeaned) data set plus the
/// scales needed to map coefficients back.
struct Prepared {
    stability::PreparedSet set;
    Eigen::VectorXd sd;    // target first
    Eigen::VectorXd mean;  // target first
    inference::LevelSet levels;
};

inline Prepared prepare(const PanelDataset& data, const Eigen::MatrixXd& complete, const Design& d,
                        bool fixed_effects, bool score_imputed_target)
{
    Prepared p;
    const Eigen::MatrixXd raw = select_columns(complete, d.columns);
    std::vector<std::string> names;
    for (Index c : d.columns) {
        names.push_back(data.variables[c].name);
    }
    const auto st = standardize(raw, names);
    p.sd = st.sd;
    p.mean = st.mean;
    p.levels.y = raw.col(0);
    p.levels.X = raw.rightCols(raw.cols() - 1);
    auto& s = p.set;
    s.n_units = data.n_units();
    s.row_unit = data.row_unit;
    if (fixed_effects) {
        const auto dm = within_transform(st.values, data.n_units(), data.n_periods());
        s.y = dm.values.col(0);
        s.X = dm.values.rightCols(dm.values.cols() - 1);
        s.n_periods = data.n_periods();
        s.n_fixed = data.n_units();
    } else {
        s.y = st.values.col(0);
        s.X = st.values.rightCols(st.values.cols() - 1);
        s.n_periods = data.is_balanced() ? data.n_periods() : 0;
        s.n_fixed = 1;
        s.center_resamples = true;
    }
    if (!score_imputed_target) {
        for (Index r = 0; r < data.n_rows(); ++r) {
            if (data.mask(r, d.target)) {
                s.scoring_rows.push_back(r);
            }
        }
    }
    return p;
}

/// Coefficients on the original scale, averaged over the data sets' scales.
inline Eigen::VectorXd destandardize(const Eigen::VectorXd& b_std, const std::vector<Prepared>& prep)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(b_std.size());
    for (const auto& p : prep) {
        for (Index j = 0; j < b_std.size(); ++j) {
            out(j) += b_std(j) * p.sd(0) / p.sd(j + 1);
        }
    }
    return out / static_cast<double>(prep.size());
}

/// Unit intercepts ybar_i - xbar_i' b averaged over the data sets.
inline Eigen::VectorXd unit_intercepts(const std::vector<Prepared>& prep, const Eigen::VectorXd& b, Index n_units)
{
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n_units);
    for (const auto& p : prep) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_units);
        Eigen::VectorXd cnt = Eigen::VectorXd::Zero(n_units);
        const Eigen::VectorXd e = p.levels.y - p.levels.X * b;
        for (Index r = 0; r < e.size(); ++r) {
            sum(p.set.row_unit[static_cast<std::size_t>(r)]) += e(r);
            cnt(p.set.row_unit[static_cast<std::size_t>(r)]) += 1.0;
        }
        alpha += sum.cwiseQuotient(cnt);
    }
    return alpha / static_cast<double>(prep.size());
}

inline double pooled_intercept(const std::vector<Prepared>& prep, const Eigen::VectorXd& b)
{
    double a = 0.0;
    for (const auto& p : prep) {
        a += (p.levels.y - p.levels.X * b).mean();
    }
    return a / static_cast<double>(prep.size());
}

/// Unit-block bootstrap estimator for intervals: least squares of the target
/// on the stable set within each data set, mapped to the original scale and
/// averaged over data sets.
inline inference::UnitEstimator stable_set_estimator(const std::vector<Prepared>& prep,
                                                     const std::vector<Index>& stable, Index n_periods)
{
    return [&prep, stable, n_periods](const std::vector<Index>& units) {
        const auto k = static_cast<Index>(stable.size());
        Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
        for (const auto& p : prep) {
            const auto& s = p.set;
            const Index rows = static_cast<Index>(units.size()) * n_periods;
            Eigen::MatrixXd X(rows, k);
            Eigen::VectorXd y(rows);
            Index a = 0;
            for (Index u : units) {
                for (Index t = 0; t < n_periods; ++t, ++a) {
                    const Index r = u * n_periods + t;
                    for (Index c = 0; c < k; ++c) {
                        X(a, c) = s.X(r, stable[static_cast<std::size_t>(c)]);
                    }
                    y(a) = s.y(r);
                }
            }
            if (s.center_resamples) {
                X.rowwise() -= X.colwise().mean();
                y.array() -= y.mean();
            }
            const Eigen::VectorXd b = X.colPivHouseholderQr().solve(y);
            for (Index c = 0; c < k; ++c) {
                out(c) += b(c) * p.sd(0) / p.sd(stable[static_cast<std::size_t>(c)] + 1);
            }
        }
        return Eigen::VectorXd(out / static_cast<double>(prep.size()));
    };
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/// Step 1 for the configured mode: M chained-equation imputations, or a single
/// mean imputation for the lasso-OLS baseline.
inline std::vector<imputation::ImputedDataset> impute(const PanelDataset& data, const PipelineConfig& cfg)
{
    if (cfg.mode == Mode::lasso_ols_meanimpute) {
        imputation::ImputedDataset d;
        d.values = imputation::placeholder_impute(data);
        d.mask = data.mask;
        return {d};
    }
    return imputation::run_mice(data, cfg.imputation);
}

inline void check_input(const PanelDataset& data, const PipelineConfig& cfg)
{
    if (cfg.intervals && cfg.bca_resamples < inference::min_resamples) {
        throw ConfigError("bca_resamples must be at least " + std::to_string(inference::min_resamples));
    }
    if (!(cfg.ci_level > 0.0 && cfg.ci_level < 1.0)) {
        throw ConfigError("ci_level must lie in (0, 1)");
    }
    data.validate();
    if (cfg.mode != Mode::mirl_pooled) {
        if (!data.is_balanced()) {
            throw InputError("fixed-effects fit needs a balanced panel; extract one with select-window first");
        }
        if (data.n_periods() < 2) {
            throw InputError("fixed effect unidentifiable: fewer than 2 periods per unit");
        }
    }
}

/// Steps 2-4 (or the baseline fit) on already completed data sets.
inline PipelineResult fit_imputed(const PanelDataset& data, const std::vector<imputation::ImputedDataset>& imputed,
                                  const PipelineConfig& cfg)
{
    check_input(data, cfg);
    if (imputed.empty()) {
        throw std::invalid_argument("fit_imputed: no completed data sets");
    }
    const auto d = detail::design_of(data);
    const bool fe = cfg.mode != Mode::mirl_pooled;
    PipelineResult res;
    res.mode = cfg.mode;
    res.criterion = cfg.random_lasso.criterion;
    res.target = data.variables[d.target].name;
    for (Index c : d.regressors) {
        res.regressors.push_back(data.variables[c].name);
    }
    res.n_units = data.n_units();
    res.n_periods = data.n_periods();
    res.n_rows = data.n_rows();
    res.M = static_cast<Index>(imputed.size());

    std::vector<detail::Prepared> prep;
    for (const auto& im : imputed) {
        prep.push_back(detail::prepare(data, im.values, d, fe, cfg.score_imputed_target));
    }
    std::vector<stability::PreparedSet> sets;
    for (const auto& p : prep) {
        sets.push_back(p.set);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const Index p = static_cast<Index>(d.regressors.size());
    if (cfg.mode == Mode::lasso_ols_meanimpute) {
        const auto& s = sets.front();
        const double lmax = lasso::lambda_max(s.X, s.y);
        const auto grid = lasso::build_lambda_grid(lmax, cfg.random_lasso.grid_size, cfg.random_lasso.grid_delta);
        const auto sel = lasso::select_lambda_oc(s.X, s.y, grid, cfg.random_lasso.criterion, s.n_fixed,
                                                 std::nullopt, cfg.random_lasso.lasso);
        const auto ols = lasso::post_lasso_ols(sel.solution.active_set, s.X, s.y);
        res.lambda_max = lmax;
        res.lambda_selected = sel.lambda;
        res.b_init_std = ols.coefficients;
        res.b_final_std = ols.coefficients;
        for (Index j = 0; j < p; ++j) {
            if (ols.coefficients(j) != 0.0) {
                res.stable_set.push_back(j);
            }
        }
    } else {
        const auto rl = stability::run_random_lasso(sets, cfg.random_lasso);
        res.lambda_max = rl.grid.lambda_max;
        res.importance = rl.importance.I;
        res.importance_estimates = rl.importance.estimates;
        res.b_init_std = rl.initial.b_init;
        res.b_final_std = rl.b_final;
        res.pi_hat = rl.stability.pi_hat;
        res.pi_star = rl.threshold.pi_star;
        res.threshold_candidates = rl.threshold.candidates;
        res.threshold_bic = rl.threshold.mean_bic;
        res.threshold_k = rl.threshold.k_used;
        res.empty_initial = rl.threshold.empty_initial;
        res.stable_set = rl.threshold.stable_set;
    }
    res.timings.selection = detail::seconds_since(t0);

    res.b_init = detail::destandardize(res.b_init_std, prep);
    res.b_final = detail::destandardize(res.b_final_std, prep);
    std::vector<inference::LevelSet> levels;
    for (const auto& pr : prep) {
        levels.push_back(pr.levels);
    }
    if (fe) {
        res.fixed_effects = detail::unit_intercepts(prep, res.b_final, data.n_units());
        res.fit = inference::fit_statistics(levels, data.row_unit, data.n_units(), res.b_final, res.fixed_effects);
    } else {
        res.intercept = detail::pooled_intercept(prep, res.b_final);
        res.fit = inference::fit_statistics(levels, data.row_unit, data.n_units(), res.b_final,
                                            Eigen::VectorXd::Constant(data.n_units(), *res.intercept));
        // Pooled model: one intercept, so the overall adjustment counts 1 + K.
        const double n = static_cast<double>(data.n_rows());
        const double q = 1.0 + static_cast<double>((res.b_final.array() != 0.0).count());
        res.fit.r2_overall_adj = 1.0 - (1.0 - res.fit.r2_overall) * (n - 1.0) / (n - q);
    }

    if (cfg.intervals && !res.stable_set.empty() && data.is_balanced()) {
        const auto t1 = std::chrono::steady_clock::now();
        const auto est = detail::stable_set_estimator(prep, res.stable_set, data.n_periods());
        const auto rep = inference::bca_replicates(est, data.n_units(), cfg.bca_resamples, cfg.seed, cfg.threads);
        for (Index c = 0; c < static_cast<Index>(res.stable_set.size()); ++c) {
            auto ci = inference::bca_from_replicates(rep, c, cfg.ci_level);
            ci.variable = res.stable_set[static_cast<std::size_t>(c)];
            res.intervals.push_back(ci);
            Significance sig;
            sig.at_10 = inference::bca_from_replicates(rep, c, 0.90).significant();
            sig.at_05 = inference::bca_from_replicates(rep, c, 0.95).significant();
            sig.at_01 = inference::bca_from_replicates(rep, c, 0.99).significant();
            res.significance.push_back(sig);
        }
        res.timings.intervals = detail::seconds_since(t1);
    }

    if (imputed.size() >= 2) {
        res.diagnostics = imputation::correlation_diagnostics(data, imputed);
    }
    return res;
}

/// Full pipeline: imputation, preparation, selection, estimation, intervals.
inline PipelineResult run_pipeline(const PanelDataset& data, PipelineConfig cfg)
{
    cfg.propagate();
    check_input(data, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const auto imputed = impute(data, cfg);
    const double t_imp = detail::seconds_since(t0);
    auto res = fit_imputed(data, imputed, cfg);
    res.timings.imputation = t_imp;
    return res;
}

} // namespace amirl::pipeline
