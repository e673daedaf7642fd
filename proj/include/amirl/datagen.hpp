#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "amirl/error.hpp"
#include "amirl/panel.hpp"
#include "amirl/rng.hpp"

namespace amirl::datagen {

/// Synthetic fixed-effects panel y_it = alpha_i + x_it' beta + e_it with
/// block-equicorrelated covariates and logistic MAR missingness.
struct ScenarioSpec {
    Index N = 60;
    Index T = 6;
    Index p = 40;
    std::vector<Index> support{0, 8, 16, 24, 32};
    std::vector<double> beta{1.0, -0.8, 0.6, -0.5, 0.7};
    double sigma_alpha = 1.0;
    double sigma_eps = 1.0;
    Index block_size = 5;
    double rho = 0.0;               // within-block correlation
    std::vector<double> block_rho;  // per-block override, optional
    double missing_rate = 0.0;      // share of maskable cells
    double mar_strength = 1.0;      // logistic slope on the standardized driver
    Index mar_driver = -1;          // covariate driving missingness; -1 = last
    bool mask_target = false;
    Index n_binary = 0;             // last covariates dichotomized at 0
    std::uint64_t seed = 1;

    [[nodiscard]] Index driver() const { return mar_driver < 0 ? p - 1 : mar_driver; }

    void validate() const
    {
        if (N < 1 || T < 1 || p < 1) {
            throw ConfigError("scenario needs N, T, p >= 1");
        }
        if (support.size() != beta.size()) {
            throw ConfigError("scenario support and beta differ in length");
        }
        std::vector<char> seen(static_cast<std::size_t>(p), 0);
        for (Index j : support) {
            if (j < 0 || j >= p || seen[static_cast<std::size_t>(j)]) {
                throw ConfigError("scenario support indices must be distinct and < p");
            }
            seen[static_cast<std::size_t>(j)] = 1;
        }
        if (!(missing_rate >= 0.0 && missing_rate <= 0.9)) {
            throw ConfigError("missing rate must lie in [0, 0.9]");
        }
        if (block_size < 1) {
            throw ConfigError("block size must be >= 1");
        }
        auto bad_rho = [](double r) { return !(r >= 0.0 && r <= 0.99); };
        if (bad_rho(rho)) {
            throw ConfigError("infeasible correlation: rho must lie in [0, 0.99]");
        }
        for (double r : block_rho) {
            if (bad_rho(r)) {
                throw ConfigError("infeasible correlation: rho must lie in [0, 0.99]");
            }
        }
        if (driver() >= p) {
            throw ConfigError("MAR driver index out of range");
        }
        if (n_binary < 0 || n_binary > p) {
            throw ConfigError("binary covariate count out of range");
        }
        if (sigma_eps < 0.0 || sigma_alpha < 0.0) {
            throw ConfigError("scales must be non-negative");
        }
    }

    [[nodiscard]] Index n_blocks() const { return (p + block_size - 1) / block_size; }

    [[nodiscard]] double rho_of_block(Index b) const
    {
        return b < static_cast<Index>(block_rho.size()) ? block_rho[static_cast<std::size_t>(b)] : rho;
    }

    [[nodiscard]] Eigen::VectorXd beta_vector() const
    {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        for (std::size_t s = 0; s < support.size(); ++s) {
            b(support[s]) = beta[s];
        }
        return b;
    }
};

struct GroundTruth {
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::MatrixXd clean;  // pre-mask values, same layout as the panel
    MaskMatrix masked;      // true where a cell was removed
    std::vector<Index> support;
};

struct Scenario {
    PanelDataset panel;
    GroundTruth truth;
};

inline std::string covariate_name(Index j) { return "x" + std::to_string(j + 1); }

namespace detail {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Intercept a with mean_r logistic(a + s z_r) = rate, by bisection.
inline double calibrate_intercept(const Eigen::VectorXd& z, double slope, double rate)
{
    double lo = -50.0;
    double hi = 50.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (Index r = 0; r < z.size(); ++r) {
            mean += logistic(mid + slope * z(r));
        }
        mean /= static_cast<double>(z.size());
        (mean < rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

/// Column 0 is the target "y"; covariate j sits in column j + 1.
inline Scenario generate(const ScenarioSpec& spec)
{
    spec.validate();
    Rng rng = make_rng(spec.seed, Stream::generator);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index N = spec.N;
    const Index T = spec.T;
    const Index p = spec.p;
    const Index n = N * T;

    Scenario s;
    GroundTruth& g = s.truth;
    g.beta = spec.beta_vector();
    g.support = spec.support;
    g.alpha.resize(N);
    for (Index i = 0; i < N; ++i) {
        g.alpha(i) = spec.sigma_alpha * normal(rng);
    }

    Eigen::MatrixXd X(n, p);
    for (Index r = 0; r < n; ++r) {
        for (Index b = 0; b < spec.n_blocks(); ++b) {
            const double rho = spec.rho_of_block(b);
            const double shared = normal(rng);
            const Index first = b * spec.block_size;
            const Index last = std::min(p, first + spec.block_size);
            for (Index j = first; j < last; ++j) {
                X(r, j) = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * normal(rng);
            }
        }
    }
    for (Index j = p - spec.n_binary; j < p; ++j) {
        for (Index r = 0; r < n; ++r) {
            X(r, j) = X(r, j) > 0.0 ? 1.0 : 0.0;
        }
    }
    Eigen::VectorXd y = X * g.beta;
    for (Index r = 0; r < n; ++r) {
        y(r) += g.alpha(r / T) + spec.sigma_eps * normal(rng);
    }

    g.clean.resize(n, p + 1);
    g.clean << y, X;
    g.masked = MaskMatrix::Constant(n, p + 1, false);
    if (spec.missing_rate > 0.0) {
        const Index drv = spec.driver() + 1;
        Eigen::VectorXd z = g.clean.col(drv);
        const double mean = z.mean();
        const double sd = std::sqrt((z.array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(n - 1)));
        z = (z.array() - mean) / (sd > 0.0 ? sd : 1.0);
        const double a = detail::calibrate_intercept(z, spec.mar_strength, spec.missing_rate);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (Index r = 0; r < n; ++r) {
            const double prob = detail::logistic(a + spec.mar_strength * z(r));
            for (Index k = 0; k <= p; ++k) {
                if (k == drv || (k == 0 && !spec.mask_target)) {
                    continue;
                }
                g.masked(r, k) = unif(rng) < prob;
            }
        }
    }

    PanelDataset& d = s.panel;
    for (Index i = 0; i < N; ++i) {
        d.unit_ids.push_back("u" + std::to_string(i + 1));
    }
    for (Index t = 0; t < T; ++t) {
        d.time_points.push_back(static_cast<int>(t + 1));
    }
    d.variables.push_back({"y", VariableKind::continuous, VariableRole::target});
    for (Index j = 0; j < p; ++j) {
        const bool bin = j >= p - spec.n_binary;
        d.variables.push_back({covariate_name(j), bin ? VariableKind::binary : VariableKind::continuous,
                               VariableRole::covariate});
    }
    for (Index r = 0; r < n; ++r) {
        d.row_unit.push_back(r / T);
        d.row_time.push_back(r % T);
    }
    d.values = g.clean;
    d.mask = !g.masked;
    for (Index r = 0; r < n; ++r) {
        for (Index k = 0; k <= p; ++k) {
            if (g.masked(r, k)) {
                d.values(r, k) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return s;
}

inline nlohmann::json truth_json(const ScenarioSpec& spec, const GroundTruth& g)
{
    nlohmann::json j;
    j["target"] = "y";
    nlohmann::json beta = nlohmann::json::object();
    for (Index k = 0; k < g.beta.size(); ++k) {
        beta[covariate_name(k)] = g.beta(k);
    }
    j["beta"] = beta;
    std::vector<std::string> support;
    for (Index k : g.support) {
        support.push_back(covariate_name(k));
    }
    j["support"] = support;
    j["alpha"] = std::vector<double>(g.alpha.data(), g.alpha.data() + g.alpha.size());
    j["masked_cells"] = g.masked.count();
    j["spec"] = {{"N", spec.N},
                 {"T", spec.T},
                 {"p", spec.p},
                 {"sigma_alpha", spec.sigma_alpha},
                 {"sigma_eps", spec.sigma_eps},
                 {"block_size", spec.block_size},
                 {"rho", spec.rho},
                 {"block_rho", spec.block_rho},
                 {"missing_rate", spec.missing_rate},
                 {"mar_strength", spec.mar_strength},
                 {"mar_driver", covariate_name(spec.driver())},
                 {"mask_target", spec.mask_target},
                 {"n_binary", spec.n_binary},
                 {"seed", spec.seed}};
    return j;
}

} // namespace amirl::datagen
