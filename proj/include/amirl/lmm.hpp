#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "amirl/error.hpp"

namespace amirl::trees {

using Eigen::Index;

struct LmmControls {
    double tolerance = 1e-6;  // relative tolerance on log(variance ratio)
    int max_iter = 200;
    double ratio_min = 1e-8;
    double ratio_max = 1e8;
};

struct LmmFit {
    Eigen::VectorXd leaf_means;
    Eigen::VectorXd unit_effects;  // BLUPs, indexed by dense unit id
    double residual_variance = 0.0;
    double unit_variance = 0.0;
    double variance_ratio = 0.0;  // unit_variance / residual_variance
    double restricted_loglik = 0.0;
    int iterations = 0;
};

namespace detail {

/// Profiled restricted likelihood of y = mu[leaf] + u[unit] + e in the ratio
/// gamma = var(u) / var(e).
class RandomInterceptProfile {
public:
    // Extended precision: for large gamma the system is nearly singular along
    // the direction that trades leaf level against unit intercepts.
    using Real = long double;
    using MatrixL = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
    using VectorL = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

    RandomInterceptProfile(std::span<const Index> leaf, const Eigen::VectorXd& y,
                           std::span<const Index> unit, Index n_leaves, Index n_units)
        : leaf_(leaf), y_(y), unit_(unit), P_(n_leaves), U_(n_units)
    {
        const Index n = y.size();
        n_leaf_ = Eigen::VectorXd::Zero(P_);
        sy_leaf_ = VectorL::Zero(P_);
        n_unit_ = Eigen::VectorXd::Zero(U_);
        sy_unit_ = VectorL::Zero(U_);
        Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(U_, P_);
        for (Index r = 0; r < n; ++r) {
            const Index p = leaf[static_cast<std::size_t>(r)];
            const Index i = unit[static_cast<std::size_t>(r)];
            n_leaf_(p) += 1.0;
            sy_leaf_(p) += y(r);
            n_unit_(i) += 1.0;
            sy_unit_(i) += y(r);
            counts(i, p) += 1.0;
        }
        cells_.resize(static_cast<std::size_t>(U_));
        for (Index i = 0; i < U_; ++i) {
            for (Index p = 0; p < P_; ++p) {
                if (counts(i, p) > 0.0) {
                    cells_[static_cast<std::size_t>(i)].push_back({p, counts(i, p)});
                }
            }
        }
    }

    struct Eval {
        double loglik;
        double sigma2;
        Eigen::VectorXd mu;
        Eigen::VectorXd unit_mean_resid;
    };

    [[nodiscard]] Eval evaluate(double gamma) const
    {
        const Index n = y_.size();
        MatrixL A = n_leaf_.cast<Real>().asDiagonal();
        VectorL b = sy_leaf_;
        double logdet_h = 0.0;
        for (Index i = 0; i < U_; ++i) {
            const Real ni = n_unit_(i);
            const Real w = static_cast<Real>(gamma) / (1 + static_cast<Real>(gamma) * ni);
            logdet_h += std::log1p(gamma * n_unit_(i));
            const auto& c = cells_[static_cast<std::size_t>(i)];
            for (const auto& [p, cp] : c) {
                b(p) -= w * cp * sy_unit_(i);
                for (const auto& [q, cq] : c) {
                    A(p, q) -= w * cp * cq;
                }
            }
        }
        const Eigen::LDLT<MatrixL> ldlt(A);
        Eval ev;
        ev.mu = ldlt.solve(b).template cast<double>();
        double logdet_a = 0.0;
        for (Index p = 0; p < P_; ++p) {
            logdet_a += std::log(std::max(static_cast<double>(ldlt.vectorD()(p)), std::numeric_limits<double>::min()));
        }

        Eigen::VectorXd rsum = Eigen::VectorXd::Zero(U_);
        for (Index r = 0; r < n; ++r) {
            rsum(unit_[static_cast<std::size_t>(r)]) += y_(r) - ev.mu(leaf_[static_cast<std::size_t>(r)]);
        }
        ev.unit_mean_resid = rsum.cwiseQuotient(n_unit_);
        double quad = 0.0;
        for (Index r = 0; r < n; ++r) {
            const Index i = unit_[static_cast<std::size_t>(r)];
            const double d = y_(r) - ev.mu(leaf_[static_cast<std::size_t>(r)]) - ev.unit_mean_resid(i);
            quad += d * d;
        }
        for (Index i = 0; i < U_; ++i) {
            const double rb = ev.unit_mean_resid(i);
            quad += n_unit_(i) * rb * rb / (1.0 + gamma * n_unit_(i));
        }
        const double dof = static_cast<double>(n - P_);
        ev.sigma2 = quad / dof;
        const double s2 = std::max(ev.sigma2, std::numeric_limits<double>::min());
        ev.loglik = -0.5 * (dof * (std::log(2.0 * std::numbers::pi * s2) + 1.0) + logdet_h + logdet_a);
        return ev;
    }

    [[nodiscard]] const Eigen::VectorXd& unit_sizes() const { return n_unit_; }

private:
    struct Cell {
        Index leaf;
        double count;
    };

    std::span<const Index> leaf_;
    const Eigen::VectorXd& y_;
    std::span<const Index> unit_;
    Index P_;
    Index U_;
    Eigen::VectorXd n_leaf_;
    VectorL sy_leaf_;
    Eigen::VectorXd n_unit_;
    VectorL sy_unit_;
    std::vector<std::vector<Cell>> cells_;
};

} // namespace detail

/// Random-intercept model y = mu[leaf] + u[unit] + e fit by restricted maximum
/// likelihood. Leaf and unit ids are dense (0-based).
inline LmmFit fit_lmm_on_leaves(std::span<const Index> leaf, const Eigen::VectorXd& y,
                                std::span<const Index> unit, Index n_leaves, Index n_units,
                                const LmmControls& controls = {})
{
    const Index n = y.size();
    if (static_cast<Index>(leaf.size()) != n || static_cast<Index>(unit.size()) != n) {
        throw std::invalid_argument("fit_lmm_on_leaves: length mismatch");
    }
    if (n == 0 || n_leaves < 1 || n_units < 1) {
        throw InputError("mixed model fit on empty input");
    }
    std::vector<char> seen_leaf(static_cast<std::size_t>(n_leaves), 0);
    std::vector<char> seen_unit(static_cast<std::size_t>(n_units), 0);
    for (Index r = 0; r < n; ++r) {
        const Index p = leaf[static_cast<std::size_t>(r)];
        const Index i = unit[static_cast<std::size_t>(r)];
        if (p < 0 || p >= n_leaves || i < 0 || i >= n_units) {
            throw std::invalid_argument("fit_lmm_on_leaves: id out of range");
        }
        seen_leaf[static_cast<std::size_t>(p)] = 1;
        seen_unit[static_cast<std::size_t>(i)] = 1;
    }
    for (char s : seen_leaf) {
        if (!s) {
            throw InputError("mixed model: a leaf has no rows");
        }
    }
    for (char s : seen_unit) {
        if (!s) {
            throw InputError("mixed model: a unit has no rows");
        }
    }

    const detail::RandomInterceptProfile profile(leaf, y, unit, n_leaves, n_units);
    LmmFit fit;
    fit.unit_effects = Eigen::VectorXd::Zero(n_units);

    if (n <= n_leaves) {
        // Residual variance has no degrees of freedom: fixed part only.
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_leaves);
        Eigen::VectorXd cnt = Eigen::VectorXd::Zero(n_leaves);
        for (Index r = 0; r < n; ++r) {
            sum(leaf[static_cast<std::size_t>(r)]) += y(r);
            cnt(leaf[static_cast<std::size_t>(r)]) += 1.0;
        }
        fit.leaf_means = sum.cwiseQuotient(cnt);
        return fit;
    }

    const bool identifiable = n_units > 1 && profile.unit_sizes().maxCoeff() > 1.0;
    double gamma = 0.0;
    auto best = profile.evaluate(0.0);
    if (identifiable) {
        const double lo = std::log(controls.ratio_min);
        const double hi = std::log(controls.ratio_max);
        auto objective = [&](double s) { return -profile.evaluate(std::exp(s)).loglik; };
        // A coarse scan brackets the global optimum before the local search.
        constexpr int grid = 16;
        int best_k = 0;
        double best_val = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= grid; ++k) {
            const double v = objective(lo + (hi - lo) * k / grid);
            if (v < best_val) {
                best_val = v;
                best_k = k;
            }
        }
        const double step = (hi - lo) / grid;
        const double a = std::max(lo, lo + step * (best_k - 1));
        const double b = std::min(hi, lo + step * (best_k + 1));
        const int bits = static_cast<int>(std::ceil(1.0 - std::log2(controls.tolerance)));
        std::uintmax_t iters = static_cast<std::uintmax_t>(controls.max_iter);
        const auto [s_opt, f_opt] = boost::math::tools::brent_find_minima(objective, a, b, bits, iters);
        fit.iterations = static_cast<int>(iters);
        if (iters >= static_cast<std::uintmax_t>(controls.max_iter)) {
            throw LmmConvergenceError("variance ratio search did not converge", std::exp(s_opt));
        }
        const double s_best = f_opt <= best_val ? s_opt : lo + step * best_k;
        auto cand = profile.evaluate(std::exp(s_best));
        if (cand.loglik > best.loglik) {
            best = std::move(cand);
            gamma = std::exp(s_best);
        }
    }

    fit.leaf_means = best.mu;
    fit.variance_ratio = gamma;
    fit.residual_variance = std::max(best.sigma2, 0.0);
    fit.unit_variance = gamma * fit.residual_variance;
    fit.restricted_loglik = best.loglik;
    const auto& ni = profile.unit_sizes();
    for (Index i = 0; i < n_units; ++i) {
        fit.unit_effects(i) = gamma * ni(i) * best.unit_mean_resid(i) / (1.0 + gamma * ni(i));
    }
    return fit;
}

} // namespace amirl::trees
