#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"

namespace amirl::lasso {

using Eigen::Index;

struct LassoControls {
    double tolerance = 1e-7;  // max coefficient change per sweep
    long max_sweeps = 100000;
};

struct LassoSolution {
    double lambda = 0.0;
    Eigen::VectorXd coefficients;
    std::vector<Index> active_set;
    double objective = 0.0;
    long iterations = 0;
};

struct LambdaGrid {
    std::vector<double> values;  // strictly decreasing
    double lambda_max = 0.0;
    double delta = 0.0;
};

enum class Criterion { bic, aic, cp };

inline std::string to_string(Criterion c)
{
    switch (c) {
    case Criterion::bic: return "bic";
    case Criterion::aic: return "aic";
    case Criterion::cp: return "cp";
    }
    return "?";
}

inline Criterion parse_criterion(const std::string& s)
{
    if (s == "bic" || s == "BIC") {
        return Criterion::bic;
    }
    if (s == "aic" || s == "AIC") {
        return Criterion::aic;
    }
    if (s == "cp" || s == "Cp" || s == "CP") {
        return Criterion::cp;
    }
    throw ConfigError("unknown criterion '" + s + "' (expected bic, aic or cp)");
}

struct CriterionValue {
    Criterion kind = Criterion::bic;
    double value = 0.0;
    Index k_used = 0;
    double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
};

/// Cross products of a design, shared by every fit on the same data.
struct Gram {
    Eigen::MatrixXd xtx;
    Eigen::VectorXd xty;
    Index n = 0;

    Gram() = default;
    Gram(const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
        : xtx(X.transpose() * X), xty(X.transpose() * y), n(X.rows())
    {
        if (y.size() != X.rows()) {
            throw std::invalid_argument("Gram: response length != design rows");
        }
    }
};

inline double lambda_max(const Gram& g)
{
    if (g.n == 0 || g.xty.size() == 0) {
        return 0.0;
    }
    return 2.0 / static_cast<double>(g.n) * g.xty.cwiseAbs().maxCoeff();
}

/// Smallest penalty with an all-zero solution: (2/n) max_j |X_j'y|.
inline double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
{
    if (X.rows() == 0 || X.cols() == 0) {
        return 0.0;
    }
    return 2.0 / static_cast<double>(X.rows()) * (X.transpose() * y).cwiseAbs().maxCoeff();
}

inline double pooled_lambda_max(const std::vector<double>& per_sample)
{
    if (per_sample.empty()) {
        throw std::invalid_argument("pooled_lambda_max: no samples");
    }
    return *std::max_element(per_sample.begin(), per_sample.end());
}

inline LambdaGrid build_lambda_grid(double lambda_max, int K = 100, double delta = 0.001)
{
    if (!(lambda_max > 0.0) || !std::isfinite(lambda_max)) {
        throw NumericalError("lambda grid needs a positive lambda_max (response has no variation)");
    }
    if (K < 1 || !(delta > 0.0 && delta < 1.0)) {
        throw ConfigError("lambda grid needs K >= 1 and delta in (0, 1)");
    }
    LambdaGrid grid;
    grid.lambda_max = lambda_max;
    grid.delta = delta;
    grid.values.resize(static_cast<std::size_t>(K));
    const double hi = std::log(lambda_max);
    const double lo = std::log(delta * lambda_max);
    for (int k = 0; k < K; ++k) {
        grid.values[static_cast<std::size_t>(k)] = K == 1 ? lambda_max : std::exp(hi + (lo - hi) * k / (K - 1));
    }
    grid.values.front() = lambda_max;
    if (K > 1) {
        grid.values.back() = delta * lambda_max;
    }
    return grid;
}

namespace detail {

inline double soft_threshold(double z, double t)
{
    if (z > t) {
        return z - t;
    }
    if (z < -t) {
        return z + t;
    }
    return 0.0;
}

inline double objective(const Gram& g, double yty, const Eigen::VectorXd& theta, double lambda)
{
    const double rss = yty - 2.0 * g.xty.dot(theta) + theta.dot(g.xtx * theta);
    return std::max(rss, 0.0) / static_cast<double>(g.n) + lambda * theta.lpNorm<1>();
}

} // namespace detail

/// Cyclic coordinate descent on (1/n)||y - X theta||^2 + lambda ||theta||_1,
/// working on the Gram matrix. `theta` is the warm start and the result.
inline long coordinate_descent(const Gram& g, double lambda, Eigen::VectorXd& theta,
                               const LassoControls& c = {})
{
    const Index p = g.xtx.rows();
    const double n = static_cast<double>(g.n);
    // grad(j) = (1/n) X_j'(y - X theta)
    Eigen::VectorXd grad = (g.xty - g.xtx * theta) / n;
    const double half = 0.5 * lambda;
    for (long sweep = 1; sweep <= c.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Index j = 0; j < p; ++j) {
            const double d = g.xtx(j, j) / n;
            if (!(d > 0.0)) {
                theta(j) = 0.0;
                continue;
            }
            const double old = theta(j);
            const double updated = detail::soft_threshold(grad(j) + d * old, half) / d;
            const double delta = updated - old;
            if (delta != 0.0) {
                theta(j) = updated;
                grad.noalias() -= (delta / n) * g.xtx.col(j);
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (max_change < c.tolerance) {
            return sweep;
        }
    }
    throw LassoConvergenceError("lasso coordinate descent hit the sweep cap", theta);
}

inline LassoSolution make_solution(const Gram& g, double yty, double lambda, Eigen::VectorXd theta, long iters)
{
    LassoSolution s;
    s.lambda = lambda;
    s.iterations = iters;
    for (Index j = 0; j < theta.size(); ++j) {
        if (theta(j) != 0.0) {
            s.active_set.push_back(j);
        }
    }
    s.objective = detail::objective(g, yty, theta, lambda);
    s.coefficients = std::move(theta);
    return s;
}

inline LassoSolution lasso_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                               const LassoControls& c = {})
{
    if (!(lambda >= 0.0)) {
        throw ConfigError("lasso penalty must be non-negative");
    }
    if (!X.allFinite() || !y.allFinite()) {
        throw InputError("lasso design contains non-finite values");
    }
    const Gram g(X, y);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(X.cols());
    const long iters = coordinate_descent(g, lambda, theta, c);
    return make_solution(g, y.squaredNorm(), lambda, std::move(theta), iters);
}

/// Solutions along a decreasing grid, each warm-started from the previous one.
inline std::vector<LassoSolution> lasso_path(const Gram& g, double yty, const std::vector<double>& lambdas,
                                             const LassoControls& c = {}, bool warm_start = true)
{
    std::vector<LassoSolution> path;
    path.reserve(lambdas.size());
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(g.xtx.rows());
    for (double lambda : lambdas) {
        if (!warm_start) {
            theta.setZero();
        }
        const long iters = coordinate_descent(g, lambda, theta, c);
        path.push_back(make_solution(g, yty, lambda, theta, iters));
    }
    return path;
}

inline std::vector<LassoSolution> lasso_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             const std::vector<double>& lambdas, const LassoControls& c = {},
                                             bool warm_start = true)
{
    return lasso_path(Gram(X, y), y.squaredNorm(), lambdas, c, warm_start);
}

struct PostOls {
    Eigen::VectorXd coefficients;  // zeros off the used support
    std::vector<Index> used;
    std::vector<Index> dropped;  // collinear with earlier-indexed selected columns
    [[nodiscard]] bool rank_deficient() const { return !dropped.empty(); }
};

/// Least squares on the selected columns. Columns that are (numerically) linear
/// combinations of earlier-indexed selected columns are dropped and reported.
inline PostOls post_lasso_ols(const std::vector<Index>& active, const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
{
    PostOls out;
    out.coefficients = Eigen::VectorXd::Zero(X.cols());
    if (active.empty()) {
        return out;
    }
    std::vector<Index> sorted = active;
    std::sort(sorted.begin(), sorted.end());
    Eigen::MatrixXd basis(X.rows(), static_cast<Index>(sorted.size()));
    Index rank = 0;
    for (Index j : sorted) {
        Eigen::VectorXd v = X.col(j);
        const double norm0 = v.norm();
        for (int pass = 0; pass < 2; ++pass) {
            for (Index k = 0; k < rank; ++k) {
                v -= basis.col(k).dot(v) * basis.col(k);
            }
        }
        const double norm = v.norm();
        if (!(norm0 > 0.0) || norm <= 1e-9 * norm0) {
            out.dropped.push_back(j);
            continue;
        }
        basis.col(rank++) = v / norm;
        out.used.push_back(j);
    }
    if (out.used.empty()) {
        return out;
    }
    Eigen::MatrixXd Xs(X.rows(), static_cast<Index>(out.used.size()));
    for (std::size_t k = 0; k < out.used.size(); ++k) {
        Xs.col(static_cast<Index>(k)) = X.col(out.used[k]);
    }
    const Eigen::VectorXd b = Xs.householderQr().solve(y);
    for (std::size_t k = 0; k < out.used.size(); ++k) {
        out.coefficients(out.used[k]) = b(static_cast<Index>(k));
    }
    return out;
}

/// Residual variance of the OLS fit on every column, with denominator
/// n - n_fixed - rank(X).
inline double full_model_variance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Index n_fixed)
{
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    const Index rank = X.cols() == 0 ? 0 : qr.rank();
    const Index dof = X.rows() - n_fixed - rank;
    if (dof <= 0) {
        throw NumericalError("full-model variance undefined: " + std::to_string(X.rows()) + " rows, " +
                             std::to_string(n_fixed + rank) + " parameters");
    }
    const Eigen::VectorXd resid = X.cols() == 0 ? Eigen::VectorXd(y) : Eigen::VectorXd(y - X * qr.solve(y));
    const double s2 = resid.squaredNorm() / static_cast<double>(dof);
    if (!(s2 > 0.0)) {
        throw NumericalError("degenerate fit: full model has zero residual variance");
    }
    return s2;
}

/// BIC = n log(RSS/n) + log(n)(n_fixed + K); AIC uses 2 in place of log(n);
/// Cp = RSS/sigma2 - n + 2K. n_fixed counts the unit effects (or the intercept).
inline CriterionValue information_criterion(double rss, Index n_obs, Index n_fixed, Index k_used, Criterion kind,
                                            double sigma2_hat = std::numeric_limits<double>::quiet_NaN())
{
    if (n_obs <= 0) {
        throw std::invalid_argument("information_criterion: no observations");
    }
    CriterionValue v;
    v.kind = kind;
    v.k_used = k_used;
    v.sigma2_hat = sigma2_hat;
    const double n = static_cast<double>(n_obs);
    switch (kind) {
    case Criterion::bic:
    case Criterion::aic: {
        if (!(rss > 0.0)) {
            throw NumericalError("degenerate fit: residual sum of squares is zero");
        }
        const double penalty = kind == Criterion::bic ? std::log(n) : 2.0;
        v.value = n * std::log(rss / n) + penalty * static_cast<double>(n_fixed + k_used);
        break;
    }
    case Criterion::cp:
        if (!(sigma2_hat > 0.0)) {
            throw NumericalError("Cp needs a positive full-model variance estimate");
        }
        v.value = rss / sigma2_hat - n + 2.0 * static_cast<double>(k_used);
        break;
    }
    return v;
}

inline CriterionValue information_criterion(const Eigen::VectorXd& residuals, Index n_fixed, Index k_used,
                                            Criterion kind,
                                            double sigma2_hat = std::numeric_limits<double>::quiet_NaN())
{
    return information_criterion(residuals.squaredNorm(), residuals.size(), n_fixed, k_used, kind, sigma2_hat);
}

namespace detail {

/// Least squares on a column subset through the Gram matrix (incremental
/// Cholesky in index order); a column nearly in the span of earlier kept
/// columns is left at zero.
inline Eigen::VectorXd gram_ols(const Gram& g, const std::vector<Index>& support)
{
    const Index p = g.xtx.rows();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    std::vector<Index> kept;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(static_cast<Index>(support.size()), static_cast<Index>(support.size()));
    for (Index j : support) {
        const Index k = static_cast<Index>(kept.size());
        Eigen::VectorXd l(k);
        for (Index a = 0; a < k; ++a) {
            double v = g.xtx(kept[static_cast<std::size_t>(a)], j);
            for (Index b = 0; b < a; ++b) {
                v -= L(a, b) * l(b);
            }
            l(a) = v / L(a, a);
        }
        const double d = g.xtx(j, j) - l.squaredNorm();
        if (!(g.xtx(j, j) > 0.0) || d <= 1e-10 * g.xtx(j, j)) {
            continue;
        }
        L.row(k).head(k) = l.transpose();
        L(k, k) = std::sqrt(d);
        kept.push_back(j);
    }
    const Index k = static_cast<Index>(kept.size());
    if (k == 0) {
        return beta;
    }
    Eigen::VectorXd rhs(k);
    for (Index a = 0; a < k; ++a) {
        rhs(a) = g.xty(kept[static_cast<std::size_t>(a)]);
    }
    const auto Lk = L.topLeftCorner(k, k).triangularView<Eigen::Lower>();
    const Eigen::VectorXd z = Lk.solve(rhs);
    const Eigen::VectorXd b = Lk.transpose().solve(z);
    for (Index a = 0; a < k; ++a) {
        beta(kept[static_cast<std::size_t>(a)]) = b(a);
    }
    return beta;
}

} // namespace detail

struct OcSelection {
    std::size_t index = 0;  // position in the grid
    double lambda = 0.0;
    LassoSolution solution;
    std::vector<double> scores;  // NaN where the fit was degenerate
};

/// Fits the lasso along the grid and returns the criterion minimizer; ties go to
/// the larger penalty. Each grid point is scored on the least-squares refit of
/// its active set, with K = active-set size.
inline OcSelection select_lambda_oc(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LambdaGrid& grid,
                                    Criterion kind, Index n_fixed, std::optional<double> sigma2_hat = std::nullopt,
                                    const LassoControls& c = {})
{
    if (grid.values.empty()) {
        throw ConfigError("empty lambda grid");
    }
    double s2 = std::numeric_limits<double>::quiet_NaN();
    if (kind == Criterion::cp) {
        s2 = sigma2_hat ? *sigma2_hat : full_model_variance(X, y, n_fixed);
    }
    const Gram g(X, y);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(X.cols());
    OcSelection best;
    best.scores.assign(grid.values.size(), std::numeric_limits<double>::quiet_NaN());
    bool found = false;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<Index> support;
    std::vector<Index> scored_support;
    double rss = 0.0;
    for (std::size_t k = 0; k < grid.values.size(); ++k) {
        const double lambda = grid.values[k];
        const long iters = coordinate_descent(g, lambda, theta, c);
        support.clear();
        for (Index j = 0; j < theta.size(); ++j) {
            if (theta(j) != 0.0) {
                support.push_back(j);
            }
        }
        if (k == 0 || support != scored_support) {
            const Eigen::VectorXd refit = detail::gram_ols(g, support);
            Eigen::VectorXd resid = y;
            for (Index j : support) {
                if (refit(j) != 0.0) {
                    resid.noalias() -= refit(j) * X.col(j);
                }
            }
            rss = resid.squaredNorm();
            scored_support = support;
        }
        if (!(rss > 0.0)) {
            continue;
        }
        const auto active = static_cast<Index>(support.size());
        const double score = information_criterion(rss, X.rows(), n_fixed, active, kind, s2).value;
        best.scores[k] = score;
        if (score < best_score) {
            best_score = score;
            best.index = k;
            best.lambda = lambda;
            best.solution = make_solution(g, y.squaredNorm(), lambda, theta, iters);
            found = true;
        }
    }
    if (!found) {
        throw NumericalError("degenerate fit at every lambda on the grid");
    }
    return best;
}

} // namespace amirl::lasso
