#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"
#include "amirl/lmm.hpp"
#include "amirl/tree.hpp"

namespace amirl::trees {

struct ReemControls {
    TreeControls tree;
    LmmControls lmm;
    double tolerance = 1e-4;  // on |change in restricted log-likelihood|
    int max_iter = 50;
};

struct ReemModel {
    DecisionTree tree;  // leaf values hold the mixed-model leaf means
    LmmFit lmm;
    std::vector<Index> units;  // sorted unit labels; lmm.unit_effects follows this order
    std::vector<double> loglik_trace;  // accepted iterations only
    int iterations = 0;
    bool converged = false;
    /// The likelihood dropped; the previous iterate was kept and fitting stopped.
    bool stalled = false;

    /// Random intercept for a unit label, or nothing if the unit was not in the sample.
    [[nodiscard]] std::optional<double> unit_effect(Index unit) const
    {
        const auto it = std::lower_bound(units.begin(), units.end(), unit);
        if (it == units.end() || *it != unit) {
            return std::nullopt;
        }
        return lmm.unit_effects(it - units.begin());
    }
};

/// Alternates a regression tree on y - u and a random-intercept model on the
/// tree's leaves until the restricted log-likelihood settles.
inline ReemModel fit_reem(const TreeWorkspace& ws, const Eigen::VectorXd& y,
                          std::span<const Index> unit_ids, const ReemControls& c = {})
{
    const Index n = y.size();
    if (static_cast<Index>(unit_ids.size()) != n || ws.X().rows() != n) {
        throw std::invalid_argument("fit_reem: length mismatch");
    }
    ReemModel model;
    model.units.assign(unit_ids.begin(), unit_ids.end());
    std::sort(model.units.begin(), model.units.end());
    model.units.erase(std::unique(model.units.begin(), model.units.end()), model.units.end());
    std::vector<Index> dense(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) {
        dense[static_cast<std::size_t>(r)] = std::lower_bound(model.units.begin(), model.units.end(),
                                                              unit_ids[static_cast<std::size_t>(r)]) -
                                             model.units.begin();
    }
    const Index n_units = static_cast<Index>(model.units.size());

    Eigen::VectorXd u_row = Eigen::VectorXd::Zero(n);
    std::vector<Index> leaf(static_cast<std::size_t>(n));
    for (int it = 1; it <= c.max_iter; ++it) {
        DecisionTree tree = fit_regression_tree(ws, y - u_row, c.tree);
        for (Index r = 0; r < n; ++r) {
            leaf[static_cast<std::size_t>(r)] = tree.leaf_of(ws.X().row(r));
        }
        LmmFit lmm = fit_lmm_on_leaves(leaf, y, dense, tree.n_leaves(), n_units, c.lmm);
        const double ll = lmm.restricted_loglik;
        if (it > 1) {
            const double prev = model.loglik_trace.back();
            if (ll < prev - c.tolerance) {
                model.stalled = true;
                break;
            }
        }
        model.tree = std::move(tree);
        model.lmm = std::move(lmm);
        model.loglik_trace.push_back(ll);
        model.iterations = it;
        if (it > 1 && std::abs(ll - model.loglik_trace[model.loglik_trace.size() - 2]) < c.tolerance) {
            model.converged = true;
            break;
        }
        for (Index r = 0; r < n; ++r) {
            u_row(r) = model.lmm.unit_effects(dense[static_cast<std::size_t>(r)]);
        }
    }
    for (Index p = 0; p < model.tree.n_leaves(); ++p) {
        model.tree.set_leaf_value(p, model.lmm.leaf_means(p));
    }
    return model;
}

inline ReemModel fit_reem(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          std::span<const Index> unit_ids, const ReemControls& c = {})
{
    if (X.rows() == 0) {
        throw InputError("RE-EM fit on empty input");
    }
    const TreeWorkspace ws(X, c.tree.validation_fraction);
    return fit_reem(ws, y, unit_ids, c);
}

/// Seen unit: u_i + mu[leaf]. Unseen unit: mu[leaf] (random intercept at its mean, 0).
inline double predict_reem(const ReemModel& model, const RowRef& row, Index unit_id)
{
    if (!row.allFinite()) {
        throw InputError("RE-EM prediction on a row with non-finite attributes");
    }
    const double mu = model.tree.predict(row);
    return mu + model.unit_effect(unit_id).value_or(0.0);
}

} // namespace amirl::trees
