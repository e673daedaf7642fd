#pragma once

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amirl/csv.hpp"
#include "amirl/mice.hpp"
#include "amirl/panel.hpp"
#include "amirl/pipeline.hpp"

namespace amirl::report {

using nlohmann::json;

inline constexpr const char* tool_version = "0.1.0";

namespace detail {

/// NaN becomes null.
inline json number(double v)
{
    if (!std::isfinite(v)) {
        return nullptr;
    }
    return v;
}

inline json interval_of(const pipeline::PipelineResult& r, Index j, json& coef)
{
    for (std::size_t c = 0; c < r.intervals.size(); ++c) {
        const auto& ci = r.intervals[c];
        if (ci.variable == j) {
            coef["ci_low"] = number(ci.lower);
            coef["ci_high"] = number(ci.upper);
            coef["ci_z0"] = number(ci.z0);
            coef["ci_acceleration"] = number(ci.acceleration);
            coef["ci_degenerate"] = ci.degenerate;
            coef["significant"] = {{"0.10", r.significance[c].at_10},
                                   {"0.05", r.significance[c].at_05},
                                   {"0.01", r.significance[c].at_01}};
            return coef;
        }
    }
    coef["ci_low"] = nullptr;
    coef["ci_high"] = nullptr;
    return coef;
}

inline bool selected(const pipeline::PipelineResult& r, Index j)
{
    return std::find(r.stable_set.begin(), r.stable_set.end(), j) != r.stable_set.end();
}

} // namespace detail

/// Resolved settings that produced a report.
inline json manifest_json(const pipeline::PipelineConfig& cfg, const std::string& input, const PanelDataset& data)
{
    const auto& im = cfg.imputation;
    const auto& rl = cfg.random_lasso;
    std::vector<std::string> excluded;
    for (const auto& v : data.variables) {
        if (v.role == VariableRole::excluded) {
            excluded.push_back(v.name);
        }
    }
    return {
        {"tool", {{"name", "amirl"}, {"version", tool_version}}},
        {"input", input},
        {"target", data.variables[static_cast<std::size_t>(data.target_index())].name},
        {"excluded", excluded},
        {"seed", cfg.seed},
        {"mode", pipeline::to_string(cfg.mode)},
        {"criterion", lasso::to_string(rl.criterion)},
        {"M", im.M},
        {"B", rl.B},
        {"cycles", im.cycles},
        {"candidate_fraction", rl.candidate_fraction},
        {"grid_size", rl.grid_size},
        {"grid_delta", rl.grid_delta},
        {"score_imputed_target", cfg.score_imputed_target},
        {"intervals", cfg.intervals},
        {"bca_resamples", cfg.bca_resamples},
        {"ci_level", cfg.ci_level},
        {"clip_bounded", im.clip_bounded},
        {"tree", {{"max_depth", im.reem.tree.max_depth},
                  {"min_leaf", im.reem.tree.min_leaf},
                  {"complexity", im.reem.tree.complexity},
                  {"validation_pruning", im.reem.tree.validation_pruning},
                  {"validation_fraction", im.reem.tree.validation_fraction}}},
        {"reem", {{"tolerance", im.reem.tolerance}, {"max_iter", im.reem.max_iter}}},
        {"lmm", {{"tolerance", im.reem.lmm.tolerance}, {"max_iter", im.reem.lmm.max_iter}}},
        {"lasso", {{"tolerance", rl.lasso.tolerance}, {"max_sweeps", rl.lasso.max_sweeps}}},
    };
}

inline json result_json(const pipeline::PipelineResult& r, const PanelDataset& data)
{
    json j;
    j["mode"] = pipeline::to_string(r.mode);
    j["criterion"] = lasso::to_string(r.criterion);
    j["target"] = r.target;
    j["dimensions"] = {{"units", r.n_units},
                       {"periods", r.n_periods},
                       {"rows", r.n_rows},
                       {"regressors", static_cast<Index>(r.regressors.size())},
                       {"imputations", r.M}};
    json coefs = json::array();
    const bool has_pi = r.pi_hat.size() > 0;
    for (Index k = 0; k < static_cast<Index>(r.regressors.size()); ++k) {
        json c;
        c["variable"] = r.regressors[static_cast<std::size_t>(k)];
        c["pi_hat"] = has_pi ? detail::number(r.pi_hat(k)) : json(nullptr);
        c["importance"] = r.importance.size() > 0 ? detail::number(r.importance(k)) : json(nullptr);
        c["b_init"] = r.b_init(k);
        c["b_final"] = r.b_final(k);
        c["b_init_standardized"] = r.b_init_std(k);
        c["b_final_standardized"] = r.b_final_std(k);
        c["selected"] = detail::selected(r, k);
        detail::interval_of(r, k, c);
        coefs.push_back(c);
    }
    j["coefficients"] = coefs;
    j["stable_set"] = [&] {
        std::vector<std::string> names;
        for (Index k : r.stable_set) {
            names.push_back(r.regressors[static_cast<std::size_t>(k)]);
        }
        return names;
    }();
    if (r.intercept) {
        j["intercept"] = *r.intercept;
    }
    if (r.fixed_effects.size() > 0) {
        json fe = json::array();
        for (Index i = 0; i < r.fixed_effects.size(); ++i) {
            fe.push_back({{"unit", data.unit_ids[static_cast<std::size_t>(i)]}, {"alpha", r.fixed_effects(i)}});
        }
        j["fixed_effects"] = fe;
    }
    json stab;
    stab["lambda_max"] = r.lambda_max;
    if (r.lambda_selected) {
        stab["lambda_selected"] = *r.lambda_selected;
    }
    if (has_pi) {
        stab["pi_star"] = detail::number(r.pi_star);
        stab["empty_initial"] = r.empty_initial;
        json table = json::array();
        for (std::size_t c = 0; c < r.threshold_bic.size(); ++c) {
            table.push_back({{"pi", r.threshold_candidates[c]},
                             {"mean_bic", detail::number(r.threshold_bic[c])},
                             {"k", r.threshold_k[c]}});
        }
        stab["threshold_bic"] = table;
    }
    j["stability"] = stab;
    j["fit"] = {{"r2_overall", detail::number(r.fit.r2_overall)},
                {"r2_overall_adj", detail::number(r.fit.r2_overall_adj)},
                {"r2_within", detail::number(r.fit.r2_within)},
                {"r2_within_adj", detail::number(r.fit.r2_within_adj)}};
    return j;
}

inline json report_json(const pipeline::PipelineResult& r, const PanelDataset& data,
                        const pipeline::PipelineConfig& cfg, const std::string& input)
{
    json j;
    j["manifest"] = manifest_json(cfg, input, data);
    j["result"] = result_json(r, data);
    return j;
}

/// variable, pi_hat, b_init, b_final, selected, ci_low, ci_high.
inline void write_coefficients_csv(std::ostream& out, const pipeline::PipelineResult& r)
{
    csv::write_row(out, {"variable", "pi_hat", "b_init", "b_final", "selected", "ci_low", "ci_high"});
    if (r.intercept) {
        csv::write_row(out, {"(intercept)", "", csv::format_number(*r.intercept), csv::format_number(*r.intercept),
                             "1", "", ""});
    }
    for (Index k = 0; k < static_cast<Index>(r.regressors.size()); ++k) {
        std::string lo;
        std::string hi;
        for (const auto& ci : r.intervals) {
            if (ci.variable == k) {
                lo = csv::format_number(ci.lower);
                hi = csv::format_number(ci.upper);
            }
        }
        csv::write_row(out, {r.regressors[static_cast<std::size_t>(k)],
                             r.pi_hat.size() > 0 ? csv::format_number(r.pi_hat(k)) : "",
                             csv::format_number(r.b_init(k)), csv::format_number(r.b_final(k)),
                             detail::selected(r, k) ? "1" : "0", lo, hi});
    }
}

/// Long-format stability table: one row per variable.
inline void write_stability_csv(std::ostream& out, const pipeline::PipelineResult& r)
{
    csv::write_row(out, {"variable", "pi_hat", "importance", "pi_star", "selected"});
    for (Index k = 0; k < static_cast<Index>(r.regressors.size()); ++k) {
        csv::write_row(out, {r.regressors[static_cast<std::size_t>(k)],
                             r.pi_hat.size() > 0 ? csv::format_number(r.pi_hat(k)) : "",
                             r.importance.size() > 0 ? csv::format_number(r.importance(k)) : "",
                             csv::format_number(r.pi_star), detail::selected(r, k) ? "1" : "0"});
    }
}

inline void write_diagnostics_csv(std::ostream& out, const std::vector<imputation::CorrelationRow>& rows,
                                  const PanelDataset& data)
{
    csv::write_row(out, {"variable_a", "variable_b", "scale", "n_complete", "r_pairwise", "r_imputed_mean",
                         "r_imputed_sd", "flagged"});
    for (const auto& r : rows) {
        csv::write_row(out, {data.variables[static_cast<std::size_t>(r.a)].name,
                             data.variables[static_cast<std::size_t>(r.b)].name, imputation::to_string(r.scale),
                             std::to_string(r.n_complete), csv::format_number(r.r_pairwise),
                             csv::format_number(r.r_imputed_mean), csv::format_number(r.r_imputed_sd),
                             r.computed ? "0" : "1"});
    }
}

inline void write_imputed_csv(std::ostream& out, const PanelDataset& data,
                              const std::vector<imputation::ImputedDataset>& sets)
{
    bool header = true;
    for (const auto& s : sets) {
        write_wide_csv(out, data, &s.values, s.m, header);
        header = false;
    }
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out << text;
}

} // namespace amirl::report
