#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"
#include "amirl/panel.hpp"
#include "amirl/parallel.hpp"
#include "amirl/reem.hpp"
#include "amirl/rng.hpp"
#include "amirl/tree.hpp"

namespace amirl::imputation {

struct ImputationConfig {
    int M = 10;
    int cycles = 20;
    std::uint64_t seed = 1;
    trees::ReemControls reem;
    trees::TreeControls classification;
    /// Clip predictions of continuous variables observed only inside [0, 1].
    bool clip_bounded = true;
    unsigned threads = 1;

    void validate() const
    {
        if (M < 1) {
            throw ConfigError("imputation needs M >= 1");
        }
        if (cycles < 1) {
            throw ConfigError("imputation needs at least one cycle");
        }
    }
};

struct ImputedDataset {
    Eigen::MatrixXd values;  // complete
    MaskMatrix mask;         // copy of the source mask
    int m = 0;
    std::uint64_t seed = 0;  // stream seed for this m
    int cycles = 0;          // cycles actually run
    /// Rows whose target value was imputed (empty if no target is assigned).
    std::vector<char> target_imputed;
};

/// Fills each missing cell with its column's observed mean; binary columns get
/// the mean rounded at 0.5 (ties to 0).
inline Eigen::MatrixXd placeholder_impute(const PanelDataset& data)
{
    Eigen::MatrixXd out = data.values;
    for (Index k = 0; k < data.n_vars(); ++k) {
        double sum = 0.0;
        Index count = 0;
        for (Index r = 0; r < data.n_rows(); ++r) {
            if (data.mask(r, k)) {
                sum += data.values(r, k);
                ++count;
            }
        }
        if (count == data.n_rows()) {
            continue;
        }
        if (count == 0) {
            throw InputError("variable '" + data.variables[k].name + "' has no observed values");
        }
        double fill = sum / static_cast<double>(count);
        if (data.variables[k].kind == VariableKind::binary) {
            fill = fill > 0.5 ? 1.0 : 0.0;
        }
        for (Index r = 0; r < data.n_rows(); ++r) {
            if (!data.mask(r, k)) {
                out(r, k) = fill;
            }
        }
    }
    return out;
}

namespace detail {

struct Column {
    Index var = 0;
    std::vector<Index> observed;
    std::vector<Index> missing;
    std::vector<Index> observed_units;
    bool binary = false;
    bool bounded = false;  // observed range within [0, 1]
};

inline std::vector<Column> incomplete_columns(const PanelDataset& data)
{
    std::vector<Column> cols;
    for (Index k = 0; k < data.n_vars(); ++k) {
        Column c;
        c.var = k;
        c.binary = data.variables[k].kind == VariableKind::binary;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (Index r = 0; r < data.n_rows(); ++r) {
            if (data.mask(r, k)) {
                c.observed.push_back(r);
                c.observed_units.push_back(data.row_unit[static_cast<std::size_t>(r)]);
                lo = std::min(lo, data.values(r, k));
                hi = std::max(hi, data.values(r, k));
            } else {
                c.missing.push_back(r);
            }
        }
        if (c.missing.empty()) {
            continue;
        }
        c.bounded = lo >= 0.0 && hi <= 1.0;
        cols.push_back(std::move(c));
    }
    return cols;
}

/// Current values of every column except `skip`, on the given rows.
inline Eigen::MatrixXd others(const Eigen::MatrixXd& v, Index skip, const std::vector<Index>& rows)
{
    Eigen::MatrixXd out(static_cast<Index>(rows.size()), v.cols() - 1);
    for (Index a = 0; a < out.rows(); ++a) {
        const Index r = rows[static_cast<std::size_t>(a)];
        out.row(a).head(skip) = v.row(r).head(skip);
        out.row(a).tail(v.cols() - 1 - skip) = v.row(r).tail(v.cols() - 1 - skip);
    }
    return out;
}

/// Continuous predictions for a variable observed only inside [0, 1] are
/// clipped to that range when `clip` is set.
inline double clip_prediction(double pred, bool bounded, bool clip)
{
    return clip && bounded ? std::clamp(pred, 0.0, 1.0) : pred;
}

inline void impute_column(Eigen::MatrixXd& v, const Column& c, const PanelDataset& data,
                          const ImputationConfig& cfg)
{
    const Eigen::MatrixXd X_obs = others(v, c.var, c.observed);
    Eigen::VectorXd y(static_cast<Index>(c.observed.size()));
    for (Index a = 0; a < y.size(); ++a) {
        y(a) = v(c.observed[static_cast<std::size_t>(a)], c.var);
    }
    const Eigen::MatrixXd X_mis = others(v, c.var, c.missing);
    if (c.binary) {
        const auto tree = trees::fit_classification_tree(X_obs, y, cfg.classification);
        for (Index a = 0; a < X_mis.rows(); ++a) {
            v(c.missing[static_cast<std::size_t>(a)], c.var) = trees::hard_class(trees::predict_class(tree, X_mis.row(a)));
        }
        return;
    }
    const auto model = trees::fit_reem(X_obs, y, c.observed_units, cfg.reem);
    for (Index a = 0; a < X_mis.rows(); ++a) {
        const Index r = c.missing[static_cast<std::size_t>(a)];
        const double pred = trees::predict_reem(model, X_mis.row(a), data.row_unit[static_cast<std::size_t>(r)]);
        v(r, c.var) = clip_prediction(pred, c.bounded, cfg.clip_bounded);
    }
}

} // namespace detail

/// Chained-equation imputation: M completed copies, each from a mean fill
/// followed by `cycles` passes over the incomplete variables in a fresh random
/// order. Continuous variables use RE-EM trees with the unit as grouping;
/// binary variables use classification trees and receive the hard class.
inline std::vector<ImputedDataset> run_mice(const PanelDataset& data, const ImputationConfig& cfg)
{
    cfg.validate();
    data.validate();
    const auto columns = detail::incomplete_columns(data);
    const Eigen::MatrixXd start = placeholder_impute(data);
    Index target = -1;
    for (Index k = 0; k < data.n_vars(); ++k) {
        if (data.variables[k].role == VariableRole::target) {
            target = k;
        }
    }

    std::vector<ImputedDataset> out(static_cast<std::size_t>(cfg.M));
    parallel_for(out.size(), cfg.threads, [&](std::size_t mi) {
        const int m = static_cast<int>(mi);
        ImputedDataset& d = out[mi];
        d.m = m;
        d.seed = derive_seed(cfg.seed, Stream::imputation, mi);
        d.mask = data.mask;
        d.values = start;
        if (target >= 0) {
            d.target_imputed.resize(static_cast<std::size_t>(data.n_rows()));
            for (Index r = 0; r < data.n_rows(); ++r) {
                d.target_imputed[static_cast<std::size_t>(r)] = data.mask(r, target) ? 0 : 1;
            }
        }
        if (columns.empty()) {
            return;
        }
        Rng rng(d.seed);
        std::vector<std::size_t> order(columns.size());
        for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t o : order) {
                const auto& c = columns[o];
                try {
                    detail::impute_column(d.values, c, data, cfg);
                } catch (const Error& e) {
                    throw Error(e.kind(), "imputation m=" + std::to_string(m) + " cycle=" +
                                              std::to_string(cycle) + " variable '" +
                                              data.variables[c.var].name + "': " + e.what());
                }
            }
            d.cycles = cycle + 1;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Correlation diagnostics
// ---------------------------------------------------------------------------

enum class CorrelationScale { raw, within };

inline std::string to_string(CorrelationScale s) { return s == CorrelationScale::raw ? "raw" : "within"; }

struct CorrelationRow {
    Index a = 0;
    Index b = 0;
    CorrelationScale scale = CorrelationScale::raw;
    Index n_complete = 0;
    bool computed = false;  // false when fewer than 3 complete cases
    double r_pairwise = std::numeric_limits<double>::quiet_NaN();
    double r_imputed_mean = std::numeric_limits<double>::quiet_NaN();
    double r_imputed_sd = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

/// Subtracts per-unit means computed over the cells marked in `mask`.
inline Eigen::MatrixXd demean_observed(const Eigen::MatrixXd& v, const MaskMatrix& mask,
                                       const std::vector<Index>& row_unit, Index n_units)
{
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_units, v.cols());
    Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(n_units, v.cols());
    for (Index r = 0; r < v.rows(); ++r) {
        const Index i = row_unit[static_cast<std::size_t>(r)];
        for (Index k = 0; k < v.cols(); ++k) {
            if (mask(r, k)) {
                sum(i, k) += v(r, k);
                cnt(i, k) += 1.0;
            }
        }
    }
    Eigen::MatrixXd out = v;
    for (Index r = 0; r < v.rows(); ++r) {
        const Index i = row_unit[static_cast<std::size_t>(r)];
        for (Index k = 0; k < v.cols(); ++k) {
            if (mask(r, k)) {
                out(r, k) -= sum(i, k) / cnt(i, k);
            }
        }
    }
    return out;
}

inline double pearson(const Eigen::MatrixXd& v, Index a, Index b, const std::vector<Index>& rows)
{
    const double n = static_cast<double>(rows.size());
    double ma = 0.0;
    double mb = 0.0;
    for (Index r : rows) {
        ma += v(r, a);
        mb += v(r, b);
    }
    ma /= n;
    mb /= n;
    double saa = 0.0;
    double sbb = 0.0;
    double sab = 0.0;
    for (Index r : rows) {
        const double da = v(r, a) - ma;
        const double db = v(r, b) - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace detail

/// Pairwise-complete correlations of the source against the spread of the same
/// correlations across the imputed sets, on levels and on unit-demeaned data
/// (standardizing does not change a correlation).
inline std::vector<CorrelationRow> correlation_diagnostics(const PanelDataset& source,
                                                           const std::vector<ImputedDataset>& imputed)
{
    const Index p = source.n_vars();
    const Index n = source.n_rows();
    const MaskMatrix full = MaskMatrix::Constant(n, p, true);
    std::vector<CorrelationRow> rows;
    for (CorrelationScale scale : {CorrelationScale::raw, CorrelationScale::within}) {
        const bool within = scale == CorrelationScale::within;
        const Eigen::MatrixXd src =
            within ? detail::demean_observed(source.values, source.mask, source.row_unit, source.n_units())
                   : source.values;
        std::vector<Eigen::MatrixXd> imp;
        imp.reserve(imputed.size());
        for (const auto& d : imputed) {
            imp.push_back(within ? detail::demean_observed(d.values, full, source.row_unit, source.n_units())
                                 : d.values);
        }
        std::vector<Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Index{0});
        for (Index a = 0; a < p; ++a) {
            for (Index b = a + 1; b < p; ++b) {
                CorrelationRow row;
                row.a = a;
                row.b = b;
                row.scale = scale;
                std::vector<Index> both;
                for (Index r = 0; r < n; ++r) {
                    if (source.mask(r, a) && source.mask(r, b)) {
                        both.push_back(r);
                    }
                }
                row.n_complete = static_cast<Index>(both.size());
                if (both.size() >= 3) {
                    row.computed = true;
                    row.r_pairwise = detail::pearson(src, a, b, both);
                }
                if (!imp.empty()) {
                    std::vector<double> rs;
                    rs.reserve(imp.size());
                    for (const auto& v : imp) {
                        rs.push_back(detail::pearson(v, a, b, all));
                    }
                    // Mean as an offset from the first value: identical correlations average exactly.
                    double shift = 0.0;
                    for (double r : rs) {
                        shift += r - rs.front();
                    }
                    const double mean = rs.front() + shift / static_cast<double>(rs.size());
                    row.r_imputed_mean = mean;
                    if (rs.size() >= 2) {
                        double ss = 0.0;
                        for (double r : rs) {
                            ss += (r - mean) * (r - mean);
                        }
                        row.r_imputed_sd = std::sqrt(ss / static_cast<double>(rs.size() - 1));
                    }
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

} // namespace amirl::imputation
