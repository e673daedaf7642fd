#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amirl/error.hpp"
#include "amirl/lasso.hpp"
#include "amirl/parallel.hpp"
#include "amirl/rng.hpp"

namespace amirl::stability {

using Eigen::Index;
using lasso::Criterion;

/// One completed data set ready for fitting: standardized regressors and
/// target, demeaned by unit (fixed effects) or centered (pooled intercept).
struct PreparedSet {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Index n_units = 0;
    Index n_periods = 0;  // 0 for unbalanced data (row bootstrap)
    std::vector<Index> row_unit;
    /// Parameters absorbed outside the lasso: N for fixed effects, 1 for an intercept.
    Index n_fixed = 0;
    /// Pooled mode: re-center every resample (unpenalized intercept).
    bool center_resamples = false;
    /// Rows used when scoring thresholds; empty = all rows.
    std::vector<Index> scoring_rows;

    [[nodiscard]] bool balanced() const { return n_periods > 0 && X.rows() == n_units * n_periods; }
};

struct RandomLassoConfig {
    int B = 100;
    Criterion criterion = Criterion::aic;
    double candidate_fraction = 1.0 / 3.0;
    int grid_size = 100;
    double grid_delta = 0.001;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    lasso::LassoControls lasso;

    void validate() const
    {
        if (B < 1) {
            throw ConfigError("bootstrap count B must be >= 1");
        }
        if (!(candidate_fraction > 0.0 && candidate_fraction <= 1.0)) {
            throw ConfigError("candidate fraction must lie in (0, 1]");
        }
    }

    /// floor(p * fraction), at least one.
    [[nodiscard]] Index candidate_count(Index p) const
    {
        const auto k = static_cast<Index>(std::floor(static_cast<double>(p) * candidate_fraction + 1e-9));
        return std::clamp<Index>(k, 1, p);
    }
};

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// N unit indices drawn with replacement.
inline std::vector<Index> block_bootstrap(Index n_units, Rng& rng)
{
    std::uniform_int_distribution<Index> pick(0, n_units - 1);
    std::vector<Index> units(static_cast<std::size_t>(n_units));
    for (auto& u : units) {
        u = pick(rng);
    }
    return units;
}

/// Row indices of a resample: whole unit blocks in time order for balanced
/// data, otherwise plain rows with replacement.
inline std::vector<Index> resample_rows(const PreparedSet& s, Rng& rng)
{
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(s.X.rows()));
    if (s.balanced()) {
        for (Index u : block_bootstrap(s.n_units, rng)) {
            for (Index t = 0; t < s.n_periods; ++t) {
                rows.push_back(u * s.n_periods + t);
            }
        }
    } else {
        std::uniform_int_distribution<Index> pick(0, s.X.rows() - 1);
        for (Index r = 0; r < s.X.rows(); ++r) {
            rows.push_back(pick(rng));
        }
    }
    return rows;
}

struct Resample {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Index n_fixed = 0;
};

inline Resample materialize(const PreparedSet& s, const std::vector<Index>& rows)
{
    Resample r;
    const auto n = static_cast<Index>(rows.size());
    r.X.resize(n, s.X.cols());
    r.y.resize(n);
    for (Index a = 0; a < n; ++a) {
        r.X.row(a) = s.X.row(rows[static_cast<std::size_t>(a)]);
        r.y(a) = s.y(rows[static_cast<std::size_t>(a)]);
    }
    if (s.center_resamples) {
        r.X.rowwise() -= r.X.colwise().mean();
        r.y.array() -= r.y.mean();
    }
    // Duplicated units keep distinct block identities, so the fixed-effect
    // count is unchanged.
    r.n_fixed = s.n_fixed;
    return r;
}

/// The (m, b) resample; identical in every step that asks for it.
inline Resample draw_resample(const PreparedSet& s, std::uint64_t seed, std::size_t m, int b)
{
    Rng rng = make_rng(seed, Stream::bootstrap, m, static_cast<std::uint64_t>(b));
    return materialize(s, resample_rows(s, rng));
}

inline Eigen::MatrixXd restrict_columns(const Eigen::MatrixXd& X, const std::vector<Index>& cols)
{
    Eigen::MatrixXd out(X.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        out.col(static_cast<Index>(c)) = X.col(cols[c]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Importance and candidate sampling
// ---------------------------------------------------------------------------

/// I_j = |mean over samples of the post-lasso estimate|; rows of `estimates`
/// are samples.
inline Eigen::VectorXd compute_importance(const Eigen::MatrixXd& estimates)
{
    if (estimates.rows() == 0) {
        return Eigen::VectorXd::Zero(estimates.cols());
    }
    return (estimates.colwise().sum() / static_cast<double>(estimates.rows())).cwiseAbs().transpose();
}

/// `count` distinct indices by sequential draws with probability proportional
/// to the remaining weights; uniform over the rest once the weights run out.
inline std::vector<Index> sample_candidates(const Eigen::VectorXd& importance, Index count, Rng& rng)
{
    const Index p = importance.size();
    if (count > p || count < 0) {
        throw std::invalid_argument("sample_candidates: count out of range");
    }
    std::vector<double> w(importance.data(), importance.data() + p);
    for (double& v : w) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            v = 0.0;
        }
    }
    std::vector<char> taken(static_cast<std::size_t>(p), 0);
    std::vector<Index> out;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index k = 0; k < count; ++k) {
        double total = 0.0;
        for (Index j = 0; j < p; ++j) {
            if (!taken[static_cast<std::size_t>(j)]) {
                total += w[static_cast<std::size_t>(j)];
            }
        }
        Index chosen = -1;
        if (total > 0.0) {
            const double u = unif(rng) * total;
            double acc = 0.0;
            for (Index j = 0; j < p; ++j) {
                if (taken[static_cast<std::size_t>(j)] || w[static_cast<std::size_t>(j)] == 0.0) {
                    continue;
                }
                acc += w[static_cast<std::size_t>(j)];
                chosen = j;
                if (u < acc) {
                    break;
                }
            }
        } else {
            const Index left = p - k;
            Index target = std::uniform_int_distribution<Index>(0, left - 1)(rng);
            for (Index j = 0; j < p; ++j) {
                if (!taken[static_cast<std::size_t>(j)] && target-- == 0) {
                    chosen = j;
                    break;
                }
            }
        }
        taken[static_cast<std::size_t>(chosen)] = 1;
        out.push_back(chosen);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Steps 2-4
// ---------------------------------------------------------------------------

namespace detail {

inline std::string tag(std::size_t m, int b) { return "m=" + std::to_string(m) + " b=" + std::to_string(b); }

template <class Fn>
void for_each_sample(std::size_t M, int B, unsigned threads, Fn&& fn)
{
    parallel_for(M * static_cast<std::size_t>(B), threads, [&](std::size_t job) {
        const std::size_t m = job / static_cast<std::size_t>(B);
        const int b = static_cast<int>(job % static_cast<std::size_t>(B));
        try {
            fn(job, m, b);
        } catch (const Error& e) {
            throw Error(e.kind(), "sample " + tag(m, b) + ": " + e.what());
        }
    });
}

/// Post-lasso OLS at the criterion-optimal penalty, scattered to length p.
inline Eigen::VectorXd oc_two_step(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const lasso::LambdaGrid& grid, Criterion kind, Index n_fixed,
                                   std::optional<double> sigma2, const lasso::LassoControls& c)
{
    const auto sel = lasso::select_lambda_oc(X, y, grid, kind, n_fixed, sigma2, c);
    return lasso::post_lasso_ols(sel.solution.active_set, X, y).coefficients;
}

} // namespace detail

/// Shared penalty grid from the largest per-sample lambda_max over all (m, b)
/// resamples of the full design.
inline lasso::LambdaGrid pooled_grid(const std::vector<PreparedSet>& sets, const RandomLassoConfig& cfg)
{
    std::vector<double> lmax(sets.size() * static_cast<std::size_t>(cfg.B));
    detail::for_each_sample(sets.size(), cfg.B, cfg.threads, [&](std::size_t job, std::size_t m, int b) {
        const auto r = draw_resample(sets[m], cfg.seed, m, b);
        lmax[job] = lasso::lambda_max(r.X, r.y);
    });
    return lasso::build_lambda_grid(lasso::pooled_lambda_max(lmax), cfg.grid_size, cfg.grid_delta);
}

struct ImportanceVector {
    Eigen::VectorXd I;
    Eigen::MatrixXd estimates;  // row m * B + b: post-lasso estimate of that sample
};

struct SampleContext {
    const std::vector<PreparedSet>* sets = nullptr;
    lasso::LambdaGrid grid;
    /// Full-model variance per sample (Mallows' Cp only).
    std::vector<double> sigma2;
};

inline std::optional<double> sigma2_of(const SampleContext& ctx, std::size_t job)
{
    if (ctx.sigma2.empty()) {
        return std::nullopt;
    }
    return ctx.sigma2[job];
}

inline SampleContext make_context(const std::vector<PreparedSet>& sets, const RandomLassoConfig& cfg)
{
    cfg.validate();
    if (sets.empty()) {
        throw std::invalid_argument("random lasso needs at least one data set");
    }
    SampleContext ctx;
    ctx.sets = &sets;
    ctx.grid = pooled_grid(sets, cfg);
    if (cfg.criterion == Criterion::cp) {
        ctx.sigma2.resize(sets.size() * static_cast<std::size_t>(cfg.B));
        detail::for_each_sample(sets.size(), cfg.B, cfg.threads, [&](std::size_t job, std::size_t m, int b) {
            const auto r = draw_resample(sets[m], cfg.seed, m, b);
            ctx.sigma2[job] = lasso::full_model_variance(r.X, r.y, r.n_fixed);
        });
    }
    return ctx;
}

/// Step 2: criterion-tuned lasso-OLS on every resample, all regressors.
inline ImportanceVector importance_step(const SampleContext& ctx, const RandomLassoConfig& cfg)
{
    const auto& sets = *ctx.sets;
    const Index p = sets.front().X.cols();
    ImportanceVector out;
    out.estimates.resize(static_cast<Index>(sets.size()) * cfg.B, p);
    detail::for_each_sample(sets.size(), cfg.B, cfg.threads, [&](std::size_t job, std::size_t m, int b) {
        const auto r = draw_resample(sets[m], cfg.seed, m, b);
        out.estimates.row(static_cast<Index>(job)) =
            detail::oc_two_step(r.X, r.y, ctx.grid, cfg.criterion, r.n_fixed, sigma2_of(ctx, job), cfg.lasso)
                .transpose();
    });
    out.I = compute_importance(out.estimates);
    return out;
}

struct InitialEstimates {
    Eigen::VectorXd b_init;
    Eigen::MatrixXd estimates;  // row m * B + b, zeros off the candidate set
    std::vector<std::vector<Index>> candidates;
};

/// Step 3: lasso-OLS on importance-sampled candidate subsets, averaged.
inline InitialEstimates initial_estimates(const SampleContext& ctx, const Eigen::VectorXd& importance,
                                          const RandomLassoConfig& cfg)
{
    const auto& sets = *ctx.sets;
    const Index p = sets.front().X.cols();
    const Index count = cfg.candidate_count(p);
    InitialEstimates out;
    const std::size_t jobs = sets.size() * static_cast<std::size_t>(cfg.B);
    out.estimates = Eigen::MatrixXd::Zero(static_cast<Index>(jobs), p);
    out.candidates.resize(jobs);
    detail::for_each_sample(sets.size(), cfg.B, cfg.threads, [&](std::size_t job, std::size_t m, int b) {
        Rng rng = make_rng(cfg.seed, Stream::candidates_initial, m, static_cast<std::uint64_t>(b));
        auto cand = sample_candidates(importance, count, rng);
        const auto r = draw_resample(sets[m], cfg.seed, m, b);
        const Eigen::MatrixXd Xc = restrict_columns(r.X, cand);
        const Eigen::VectorXd beta =
            detail::oc_two_step(Xc, r.y, ctx.grid, cfg.criterion, r.n_fixed, sigma2_of(ctx, job), cfg.lasso);
        for (std::size_t c = 0; c < cand.size(); ++c) {
            out.estimates(static_cast<Index>(job), cand[c]) = beta(static_cast<Index>(c));
        }
        out.candidates[job] = std::move(cand);
    });
    out.b_init = out.estimates.colwise().sum().transpose() / static_cast<double>(jobs);
    return out;
}

struct SelectionFrequencies {
    Eigen::VectorXd pi_hat;
    Eigen::MatrixXd frequency;  // grid point x variable
    std::vector<std::vector<Index>> candidates;
};

/// Step 4: lasso paths over the shared grid on fresh candidate subsets;
/// pi_j is the largest selection frequency over the grid.
inline SelectionFrequencies stability_probabilities(const SampleContext& ctx, const Eigen::VectorXd& importance,
                                                    const RandomLassoConfig& cfg)
{
    const auto& sets = *ctx.sets;
    const Index p = sets.front().X.cols();
    const Index count = cfg.candidate_count(p);
    const std::size_t jobs = sets.size() * static_cast<std::size_t>(cfg.B);
    const auto K = static_cast<Index>(ctx.grid.values.size());
    std::vector<Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>> hits(jobs);
    SelectionFrequencies out;
    out.candidates.resize(jobs);
    detail::for_each_sample(sets.size(), cfg.B, cfg.threads, [&](std::size_t job, std::size_t m, int b) {
        Rng rng = make_rng(cfg.seed, Stream::candidates_stability, m, static_cast<std::uint64_t>(b));
        auto cand = sample_candidates(importance, count, rng);
        const auto r = draw_resample(sets[m], cfg.seed, m, b);
        const Eigen::MatrixXd Xc = restrict_columns(r.X, cand);
        const lasso::Gram g(Xc, r.y);
        const auto path = lasso::lasso_path(g, r.y.squaredNorm(), ctx.grid.values, cfg.lasso);
        auto& h = hits[job];
        h = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(K, p);
        for (Index k = 0; k < K; ++k) {
            for (Index a : path[static_cast<std::size_t>(k)].active_set) {
                h(k, cand[static_cast<std::size_t>(a)]) = 1;
            }
        }
        out.candidates[job] = std::move(cand);
    });
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> total = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(K, p);
    for (const auto& h : hits) {
        total += h;
    }
    out.frequency = total.cast<double>() / static_cast<double>(jobs);
    out.pi_hat = out.frequency.colwise().maxCoeff().transpose();
    return out;
}

struct ThresholdChoice {
    double pi_star = 0.0;
    std::vector<Index> stable_set;
    std::vector<double> candidates;   // distinct pi values, increasing
    std::vector<double> mean_bic;     // per candidate
    std::vector<Index> k_used;        // per candidate
    bool empty_initial = false;       // b_init was all zero
};

/// BIC of y - X b on the chosen rows of one data set.
inline double threshold_bic(const PreparedSet& s, const Eigen::VectorXd& b, Index k)
{
    const Eigen::VectorXd resid = s.y - s.X * b;
    double rss = 0.0;
    Index n = 0;
    if (s.scoring_rows.empty()) {
        rss = resid.squaredNorm();
        n = resid.size();
    } else {
        for (Index r : s.scoring_rows) {
            rss += resid(r) * resid(r);
        }
        n = static_cast<Index>(s.scoring_rows.size());
    }
    if (!(rss > 0.0)) {
        return -std::numeric_limits<double>::infinity();  // exact fit
    }
    return lasso::information_criterion(rss, n, s.n_fixed, k, Criterion::bic).value;
}

/// pi* minimizes the data-set-averaged BIC of b_init thresholded at pi over
/// the distinct pi_hat values; ties go to the largest pi.
inline ThresholdChoice select_threshold(const Eigen::VectorXd& pi_hat, const Eigen::VectorXd& b_init,
                                        const std::vector<PreparedSet>& sets)
{
    ThresholdChoice out;
    std::vector<double> pis(pi_hat.data(), pi_hat.data() + pi_hat.size());
    std::sort(pis.begin(), pis.end());
    pis.erase(std::unique(pis.begin(), pis.end()), pis.end());
    out.candidates = pis;
    if (pis.empty()) {
        return out;
    }
    if ((b_init.array() == 0.0).all()) {
        out.empty_initial = true;
        out.pi_star = pis.back();
        return out;
    }
    double best = std::numeric_limits<double>::infinity();
    for (double pi : pis) {
        Eigen::VectorXd b = b_init;
        Index k = 0;
        for (Index j = 0; j < b.size(); ++j) {
            if (pi_hat(j) < pi) {
                b(j) = 0.0;
            }
            k += b(j) != 0.0;
        }
        double sum = 0.0;
        for (const auto& s : sets) {
            sum += threshold_bic(s, b, k);
        }
        const double mean = sum / static_cast<double>(sets.size());
        out.mean_bic.push_back(mean);
        out.k_used.push_back(k);
        if (mean <= best) {
            best = mean;
            out.pi_star = pi;
        }
    }
    for (Index j = 0; j < pi_hat.size(); ++j) {
        if (pi_hat(j) >= out.pi_star) {
            out.stable_set.push_back(j);
        }
    }
    return out;
}

/// b_final = b_init on the stable set, zero elsewhere.
inline Eigen::VectorXd amirl_estimates(const Eigen::VectorXd& b_init, const std::vector<Index>& stable_set)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(b_init.size());
    for (Index j : stable_set) {
        out(j) = b_init(j);
    }
    return out;
}

struct RandomLassoResult {
    lasso::LambdaGrid grid;
    ImportanceVector importance;
    InitialEstimates initial;
    SelectionFrequencies stability;
    ThresholdChoice threshold;
    Eigen::VectorXd b_final;
};

/// Steps 2-4 on prepared data sets.
inline RandomLassoResult run_random_lasso(const std::vector<PreparedSet>& sets, const RandomLassoConfig& cfg)
{
    RandomLassoResult res;
    const auto ctx = make_context(sets, cfg);
    res.grid = ctx.grid;
    res.importance = importance_step(ctx, cfg);
    res.initial = initial_estimates(ctx, res.importance.I, cfg);
    res.stability = stability_probabilities(ctx, res.importance.I, cfg);
    res.threshold = select_threshold(res.stability.pi_hat, res.initial.b_init, sets);
    res.b_final = amirl_estimates(res.initial.b_init, res.threshold.stable_set);
    return res;
}

} // namespace amirl::stability
