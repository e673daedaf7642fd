#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "amirl/error.hpp"
#include "amirl/parallel.hpp"
#include "amirl/rng.hpp"

namespace amirl::inference {

using Eigen::Index;

struct FitStats {
    double r2_overall = 0.0;
    double r2_overall_adj = 0.0;
    double r2_within = 0.0;
    double r2_within_adj = 0.0;
};

/// One completed data set on the original scale.
struct LevelSet {
    Eigen::MatrixXd X;  // regressors
    Eigen::VectorXd y;
};

/// R^2 on levels with the unit intercepts folded back (N + K parameters) and on
/// unit-demeaned data (K regressors), averaged over the data sets.
inline FitStats fit_statistics(const std::vector<LevelSet>& sets, const std::vector<Index>& row_unit,
                               Index n_units, const Eigen::VectorXd& b, const Eigen::VectorXd& alpha)
{
    if (sets.empty()) {
        throw std::invalid_argument("fit_statistics: no data sets");
    }
    if (alpha.size() != n_units) {
        throw std::invalid_argument("fit_statistics: one intercept per unit expected");
    }
    const Index K = (b.array() != 0.0).count();
    FitStats acc;
    for (const auto& s : sets) {
        const Index n = s.y.size();
        const double nd = static_cast<double>(n);
        Eigen::VectorXd ysum = Eigen::VectorXd::Zero(n_units);
        Eigen::VectorXd xbsum = Eigen::VectorXd::Zero(n_units);
        Eigen::VectorXd cnt = Eigen::VectorXd::Zero(n_units);
        const Eigen::VectorXd xb = s.X * b;
        for (Index r = 0; r < n; ++r) {
            const Index i = row_unit[static_cast<std::size_t>(r)];
            ysum(i) += s.y(r);
            xbsum(i) += xb(r);
            cnt(i) += 1.0;
        }
        const double ybar = s.y.mean();
        double tss = 0.0;
        double rss = 0.0;
        double tss_w = 0.0;
        double rss_w = 0.0;
        for (Index r = 0; r < n; ++r) {
            const Index i = row_unit[static_cast<std::size_t>(r)];
            const double e = s.y(r) - alpha(i) - xb(r);
            tss += (s.y(r) - ybar) * (s.y(r) - ybar);
            rss += e * e;
            const double yd = s.y(r) - ysum(i) / cnt(i);
            const double ed = yd - (xb(r) - xbsum(i) / cnt(i));
            tss_w += yd * yd;
            rss_w += ed * ed;
        }
        if (!(tss > 0.0) || !(tss_w > 0.0)) {
            throw NumericalError("R^2 undefined: target has no variation");
        }
        const double r2 = 1.0 - rss / tss;
        const double r2w = 1.0 - rss_w / tss_w;
        const double q = static_cast<double>(n_units + K);
        acc.r2_overall += r2;
        acc.r2_overall_adj += nd - q > 0.0 ? 1.0 - (1.0 - r2) * (nd - 1.0) / (nd - q) : std::numeric_limits<double>::quiet_NaN();
        acc.r2_within += r2w;
        acc.r2_within_adj += nd - 1.0 - static_cast<double>(K) > 0.0
                                 ? 1.0 - (1.0 - r2w) * (nd - 1.0) / (nd - 1.0 - static_cast<double>(K))
                                 : std::numeric_limits<double>::quiet_NaN();
    }
    const double M = static_cast<double>(sets.size());
    acc.r2_overall /= M;
    acc.r2_overall_adj /= M;
    acc.r2_within /= M;
    acc.r2_within_adj /= M;
    return acc;
}

// ---------------------------------------------------------------------------
// BCa intervals
// ---------------------------------------------------------------------------

struct CoefficientInterval {
    Index variable = -1;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.0;
    double z0 = 0.0;
    double acceleration = 0.0;
    bool degenerate = false;  // every replicate equal; the interval is the point

    [[nodiscard]] bool significant() const { return !(lower <= 0.0 && 0.0 <= upper); }
};

/// Estimator evaluated on a multiset of unit indices (a resample or a
/// leave-one-out set); returns one value per coefficient.
inline constexpr int min_resamples = 200;

using UnitEstimator = std::function<Eigen::VectorXd(const std::vector<Index>& units)>;

/// Bootstrap and jackknife replicates kept so intervals at several levels come
/// from the same resamples.
struct BcaReplicates {
    Eigen::VectorXd estimate;
    Eigen::MatrixXd bootstrap;  // R x q
    Eigen::MatrixXd jackknife;  // N x q
};

inline BcaReplicates bca_replicates(const UnitEstimator& estimator, Index n_units, int R, std::uint64_t seed,
                                    unsigned threads = 1)
{
    if (n_units < 2) {
        throw InputError("BCa intervals need at least two units");
    }
    if (R < min_resamples) {
        throw ConfigError("BCa needs at least " + std::to_string(min_resamples) + " bootstrap resamples");
    }
    std::vector<Index> all(static_cast<std::size_t>(n_units));
    std::iota(all.begin(), all.end(), Index{0});
    BcaReplicates rep;
    rep.estimate = estimator(all);
    const Index q = rep.estimate.size();
    rep.bootstrap.resize(R, q);
    parallel_for(static_cast<std::size_t>(R), threads, [&](std::size_t r) {
        Rng rng = make_rng(seed, Stream::interval, r);
        std::uniform_int_distribution<Index> pick(0, n_units - 1);
        std::vector<Index> units(static_cast<std::size_t>(n_units));
        for (auto& u : units) {
            u = pick(rng);
        }
        rep.bootstrap.row(static_cast<Index>(r)) = estimator(units).transpose();
    });
    rep.jackknife.resize(n_units, q);
    parallel_for(static_cast<std::size_t>(n_units), threads, [&](std::size_t i) {
        std::vector<Index> units;
        units.reserve(static_cast<std::size_t>(n_units - 1));
        for (Index u = 0; u < n_units; ++u) {
            if (u != static_cast<Index>(i)) {
                units.push_back(u);
            }
        }
        rep.jackknife.row(static_cast<Index>(i)) = estimator(units).transpose();
    });
    return rep;
}

namespace detail {

/// Linear-interpolation quantile of sorted values (R type 7).
inline double quantile_sorted(const std::vector<double>& v, double prob)
{
    const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace detail

/// BCa interval for coefficient `k` at two-sided level `level` (e.g. 0.9).
inline CoefficientInterval bca_from_replicates(const BcaReplicates& rep, Index k, double level)
{
    if (!(level > 0.0 && level < 1.0)) {
        throw ConfigError("confidence level must lie in (0, 1)");
    }
    const boost::math::normal normal;
    CoefficientInterval ci;
    ci.variable = k;
    ci.level = level;
    ci.estimate = rep.estimate(k);
    const Index R = rep.bootstrap.rows();
    std::vector<double> boot(static_cast<std::size_t>(R));
    for (Index r = 0; r < R; ++r) {
        boot[static_cast<std::size_t>(r)] = rep.bootstrap(r, k);
    }
    std::sort(boot.begin(), boot.end());
    if (boot.front() == boot.back()) {
        ci.degenerate = true;
        ci.lower = ci.upper = ci.estimate;
        return ci;
    }
    double below = 0.0;
    for (double v : boot) {
        below += v < ci.estimate ? 1.0 : (v == ci.estimate ? 0.5 : 0.0);
    }
    const double Rd = static_cast<double>(R);
    const double share = std::clamp(below / Rd, 0.5 / Rd, 1.0 - 0.5 / Rd);
    ci.z0 = boost::math::quantile(normal, share);

    const Eigen::VectorXd jk = rep.jackknife.col(k);
    const double mean = jk.mean();
    double s2 = 0.0;
    double s3 = 0.0;
    for (Index i = 0; i < jk.size(); ++i) {
        const double d = mean - jk(i);
        s2 += d * d;
        s3 += d * d * d;
    }
    ci.acceleration = s2 > 0.0 ? s3 / (6.0 * std::pow(s2, 1.5)) : 0.0;

    auto adjusted = [&](double alpha) {
        const double z = boost::math::quantile(normal, alpha);
        const double w = ci.z0 + z;
        const double denom = 1.0 - ci.acceleration * w;
        if (!(denom > 0.0)) {
            return alpha < 0.5 ? 0.0 : 1.0;
        }
        return boost::math::cdf(normal, ci.z0 + w / denom);
    };
    const double tail = 0.5 * (1.0 - level);
    ci.lower = detail::quantile_sorted(boot, adjusted(tail));
    ci.upper = detail::quantile_sorted(boot, adjusted(1.0 - tail));
    return ci;
}

/// Unit-block bootstrap BCa interval for a scalar estimator.
inline CoefficientInterval bca_interval(const std::function<double(const std::vector<Index>&)>& estimator,
                                        Index n_units, double level, int R, std::uint64_t seed,
                                        unsigned threads = 1)
{
    const UnitEstimator vec = [&](const std::vector<Index>& units) {
        Eigen::VectorXd v(1);
        v(0) = estimator(units);
        return v;
    };
    return bca_from_replicates(bca_replicates(vec, n_units, R, seed, threads), 0, level);
}

} // namespace amirl::inference
