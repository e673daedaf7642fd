// Acceptance harness: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion...]   (default: all)

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "amirl/amirl.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace amirl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 3)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

unsigned workers()
{
    return std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
}

// ---------------------------------------------------------------------------
// Shared criterion-4 scenarios
// ---------------------------------------------------------------------------

datagen::ScenarioSpec stress_spec(std::uint64_t seed)
{
    datagen::ScenarioSpec s;
    s.N = 60;
    s.T = 6;
    s.p = 40;
    s.support = {0, 8, 16, 24, 32};
    s.beta = {1.0, -0.8, 0.6, -0.5, 0.7};
    s.sigma_eps = 1.0;
    s.rho = 0.7;
    s.missing_rate = 0.15;
    s.seed = seed;
    return s;
}

pipeline::PipelineConfig stress_config(std::uint64_t seed, pipeline::Mode mode = pipeline::Mode::amirl)
{
    pipeline::PipelineConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.threads = workers();
    cfg.imputation.M = 5;
    cfg.random_lasso.B = 50;
    cfg.random_lasso.criterion = lasso::Criterion::aic;
    cfg.intervals = false;
    cfg.propagate();
    return cfg;
}

struct StressRun {
    datagen::ScenarioSpec spec;
    datagen::Scenario scenario;
    std::vector<imputation::ImputedDataset> imputed;
    pipeline::PipelineResult amirl;
    double imputation_seconds = 0.0;
    double selection_seconds = 0.0;
};

constexpr int stress_seeds = 20;

const std::vector<StressRun>& stress_runs()
{
    static const std::vector<StressRun> runs = [] {
        std::vector<StressRun> out;
        for (int s = 1; s <= stress_seeds; ++s) {
            StressRun r;
            r.spec = stress_spec(static_cast<std::uint64_t>(s));
            r.scenario = datagen::generate(r.spec);
            const auto cfg = stress_config(static_cast<std::uint64_t>(s));
            auto t0 = Clock::now();
            r.imputed = pipeline::impute(r.scenario.panel, cfg);
            r.imputation_seconds = seconds_since(t0);
            t0 = Clock::now();
            r.amirl = pipeline::fit_imputed(r.scenario.panel, r.imputed, cfg);
            r.selection_seconds = seconds_since(t0);
            out.push_back(std::move(r));
        }
        return out;
    }();
    return runs;
}

struct Counts {
    Index tp = 0;
    Index fp = 0;
};

Counts score(const std::vector<Index>& selected, const std::vector<Index>& support)
{
    Counts c;
    for (Index j : selected) {
        (std::find(support.begin(), support.end(), j) != support.end() ? c.tp : c.fp) += 1;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Verdict window_arithmetic()
{
    const auto t0 = Clock::now();
    const auto table = fixtures::availability_table();
    const auto windows = select_balanced_window(table, 2, 0.01, any_nonzero());
    const double secs = seconds_since(t0);
    auto size_of = [&](int s, int e) -> Index {
        for (const auto& w : windows) {
            if (w.start_year == s && w.end_year == e) {
                return w.panel_size;
            }
        }
        return -1;
    };
    const Index full = size_of(2009, 2014);
    const Index late = size_of(2011, 2014);
    const bool first = !windows.empty() && windows.front().start_year == 2009 && windows.front().end_year == 2014;
    return {full == 1278 && late == 1284 && first && secs < 1.0,
            "2009-2014 size " + std::to_string(full) + ", 2011-2014 size " + std::to_string(late) +
                ", top " + (windows.empty() ? std::string("none")
                                            : std::to_string(windows.front().start_year) + "-" +
                                                  std::to_string(windows.front().end_year)) +
                ", " + fmt(secs) + " s"};
}

Verdict lasso_oracle()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    double worst_diff = 0.0;
    double worst_kkt = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::MatrixXd X = fixtures::random_matrix(50, 10, rng);
        X.rowwise() -= X.colwise().mean();
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(10);
        beta(rep % 10) = 1.0;
        beta((rep + 3) % 10) = -0.5;
        Eigen::VectorXd y = X * beta + fixtures::random_vector(50, rng);
        y.array() -= y.mean();
        const auto grid = lasso::build_lambda_grid(lasso::lambda_max(X, y), 20, 0.01);
        const auto path = lasso::lasso_path(X, y, grid.values);
        for (std::size_t k = 0; k < path.size(); ++k) {
            const auto& b = path[k].coefficients;
            const Eigen::VectorXd ref = oracles::fista(X, y, grid.values[k]);
            worst_diff = std::max(worst_diff, (b - ref).cwiseAbs().maxCoeff());
            worst_kkt = std::max(worst_kkt, oracles::kkt_violation(X, y, b, grid.values[k]));
        }
    }
    const double secs = seconds_since(t0);
    return {worst_diff <= 1e-6 && worst_kkt <= 1e-6 && secs < 30.0,
            "max |diff| " + sci(worst_diff) + ", max KKT " + sci(worst_kkt) + ", " +
                fmt(secs, 1) + " s"};
}

Verdict exact_recovery()
{
    const auto t0 = Clock::now();
    datagen::ScenarioSpec spec;
    spec.N = 30;
    spec.T = 4;
    spec.p = 10;
    spec.support = {0, 4, 7};
    spec.beta = {1.0, -0.8, 0.6};
    spec.sigma_eps = 0.0;
    spec.seed = 3;
    const auto s = datagen::generate(spec);
    pipeline::PipelineConfig cfg;
    cfg.imputation.M = 1;
    cfg.random_lasso.B = 10;
    const auto r = pipeline::run_pipeline(s.panel, cfg);
    const double err = (r.b_final - spec.beta_vector()).cwiseAbs().maxCoeff();
    const std::vector<Index> truth(spec.support.begin(), spec.support.end());
    const double secs = seconds_since(t0);
    return {r.stable_set == truth && err <= 1e-6 && secs < 30.0,
            "stable set " + std::string(r.stable_set == truth ? "equals" : "differs from") +
                " support, max |b - beta| " + sci(err) + ", " + fmt(secs, 1) + " s"};
}

Verdict support_recovery()
{
    const auto& runs = stress_runs();
    double tp = 0.0;
    double fp = 0.0;
    std::vector<double> pi_true;
    std::vector<double> pi_null;
    double run_seconds = 0.0;
    for (const auto& r : runs) {
        const std::vector<Index> support(r.spec.support.begin(), r.spec.support.end());
        const auto c = score(r.amirl.stable_set, support);
        tp += static_cast<double>(c.tp);
        fp += static_cast<double>(c.fp);
        for (Index j = 0; j < r.amirl.pi_hat.size(); ++j) {
            (std::find(support.begin(), support.end(), j) != support.end() ? pi_true : pi_null)
                .push_back(r.amirl.pi_hat(j));
        }
        run_seconds += r.imputation_seconds + r.selection_seconds;
    }
    tp /= static_cast<double>(runs.size());
    fp /= static_cast<double>(runs.size());
    std::sort(pi_true.begin(), pi_true.end());
    std::sort(pi_null.begin(), pi_null.end());
    const double med = inference::detail::quantile_sorted(pi_true, 0.5);
    const double p90 = inference::detail::quantile_sorted(pi_null, 0.9);
    return {tp >= 4.0 && fp <= 3.0 && med > p90 && run_seconds <= 600.0,
            "mean TP " + fmt(tp, 2) + ", mean FP " + fmt(fp, 2) + ", median true pi " + fmt(med) +
                " vs null 90th pct " + fmt(p90) + ", " + fmt(run_seconds, 0) + " s on " +
                std::to_string(workers()) + " worker(s)"};
}

Verdict imputation_fidelity()
{
    const auto& runs = stress_runs();
    bool observed_ok = true;
    double worst_gap = 0.0;
    double worst_sd = 0.0;
    Index pairs = 0;
    Index skipped = 0;
    double imputation_seconds = 0.0;
    double floor_gap = 0.0;
    std::string where;
    for (const auto& r : runs) {
        const auto& d = r.scenario.panel;
        for (const auto& im : r.imputed) {
            for (Index c = 0; c < d.n_vars(); ++c) {
                for (Index row = 0; row < d.n_rows(); ++row) {
                    if (d.mask(row, c) && std::bit_cast<std::uint64_t>(im.values(row, c)) !=
                                              std::bit_cast<std::uint64_t>(d.values(row, c))) {
                        observed_ok = false;
                    }
                }
            }
        }
        for (const auto& row : imputation::correlation_diagnostics(d, r.imputed)) {
            if (!row.computed) {
                ++skipped;
                continue;
            }
            ++pairs;
            const double gap = std::abs(row.r_imputed_mean - row.r_pairwise);
            if (gap > worst_gap) {
                worst_gap = gap;
                where = d.variables[static_cast<std::size_t>(row.a)].name + "/" +
                        d.variables[static_cast<std::size_t>(row.b)].name + " " + imputation::to_string(row.scale) +
                        " seed " + std::to_string(r.spec.seed);
            }
            worst_sd = std::max(worst_sd, row.r_imputed_sd);
        }
        imputation_seconds += r.imputation_seconds;

        // Same statistic with the generating values in place of imputations.
        imputation::ImputedDataset truth;
        truth.values = r.scenario.truth.clean;
        truth.mask = d.mask;
        for (const auto& row : imputation::correlation_diagnostics(d, {truth})) {
            if (row.computed) {
                floor_gap = std::max(floor_gap, std::abs(row.r_imputed_mean - row.r_pairwise));
            }
        }
    }
    return {observed_ok && worst_gap <= 0.1 && worst_sd <= 0.05 && skipped == 0 && imputation_seconds <= 300.0,
            std::string("observed cells ") + (observed_ok ? "unchanged" : "CHANGED") + ", max |mean r - pairwise r| " +
                fmt(worst_gap) + " (" + where + "; " + fmt(floor_gap) + " with the true values), max sd " + fmt(worst_sd) + " over " + std::to_string(pairs) +
                " pairs, " + std::to_string(skipped) + " not computed, imputation " + fmt(imputation_seconds, 0) +
                " s"};
}

std::vector<Index> unit_labels(Index units, Index periods)
{
    std::vector<Index> out;
    for (Index i = 0; i < units; ++i) {
        for (Index t = 0; t < periods; ++t) {
            out.push_back(i);
        }
    }
    return out;
}

Verdict reem_limits()
{
    std::mt19937_64 rng(61);
    std::normal_distribution<double> z;

    // No unit-level variance: each unit's rows come in pairs whose noise cancels.
    const Index N = 20;
    const Index T = 6;
    Eigen::MatrixXd X(N * T, 3);
    Eigen::VectorXd y(N * T);
    for (Index i = 0; i < N; ++i) {
        for (Index t = 0; t < T; t += 2) {
            const Eigen::RowVector3d x(z(rng), z(rng), z(rng));
            const double d = 0.3 * z(rng);
            const double f = x(0) > 0.0 ? 3.0 : (x(1) > 0.5 ? 1.0 : 0.0);
            X.row(i * T + t) = x;
            X.row(i * T + t + 1) = x;
            y(i * T + t) = f + d;
            y(i * T + t + 1) = f - d;
        }
    }
    const auto units = unit_labels(N, T);
    const auto model = trees::fit_reem(X, y, units);
    const auto plain = trees::fit_regression_tree(X, y);
    double gap = 0.0;
    for (Index r = 0; r < N * T; ++r) {
        gap = std::max(gap, std::abs(trees::predict_reem(model, X.row(r), units[static_cast<std::size_t>(r)]) -
                                     plain.predict(X.row(r))));
    }

    // Target equal to a pure unit effect.
    const Eigen::MatrixXd X2 = fixtures::random_matrix(15 * 6, 4, rng);
    const Eigen::VectorXd alpha = 3.0 * fixtures::random_vector(15, rng);
    Eigen::VectorXd y2(15 * 6);
    for (Index r = 0; r < y2.size(); ++r) {
        y2(r) = alpha(r / 6);
    }
    const auto u2 = unit_labels(15, 6);
    const auto m2 = trees::fit_reem(X2, y2, u2);
    double unit_err = 0.0;
    for (Index r = 0; r < y2.size(); ++r) {
        unit_err = std::max(unit_err,
                            std::abs(trees::predict_reem(m2, X2.row(r), u2[static_cast<std::size_t>(r)]) - y2(r)));
    }

    // Restricted likelihood over alternations.
    bool monotone = true;
    Index traces = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::MatrixXd X3 = fixtures::random_matrix(25 * 6, 5, rng);
        const Eigen::VectorXd a3 = fixtures::random_vector(25, rng);
        Eigen::VectorXd y3 = X3.col(0).array().tanh() * 2.0 + 0.5 * fixtures::random_vector(25 * 6, rng).array();
        for (Index r = 0; r < y3.size(); ++r) {
            y3(r) += a3(r / 6);
        }
        const trees::ReemControls c;
        const auto m3 = trees::fit_reem(X3, y3, unit_labels(25, 6), c);
        for (std::size_t k = 1; k < m3.loglik_trace.size(); ++k) {
            monotone = monotone && m3.loglik_trace[k] >= m3.loglik_trace[k - 1] - c.tolerance;
        }
        traces += m3.loglik_trace.empty() ? 0 : 1;
    }
    return {gap <= 1e-8 && unit_err <= 1e-6 && monotone && traces == 10,
            "tree gap " + sci(gap) + ", unit-effect error " + sci(unit_err) + ", likelihood " + (monotone ? "non-decreasing" : "DECREASED") + " in " + std::to_string(traces) +
                " fits"};
}

Verdict information_criteria()
{
    const double bic = lasso::information_criterion(12.0, 12, 2, 1, lasso::Criterion::bic).value;
    const double aic = lasso::information_criterion(12.0, 12, 2, 1, lasso::Criterion::aic).value;
    const double cp = lasso::information_criterion(12.0, 12, 2, 1, lasso::Criterion::cp, 1.0).value;
    return {std::abs(bic - 7.4547) <= 1e-4 && std::abs(aic - 6.0) <= 1e-4 && std::abs(cp - 2.0) <= 1e-4,
            "BIC " + fmt(bic, 4) + ", AIC " + fmt(aic, 4) + ", Cp " + fmt(cp, 4)};
}

Verdict bca_coverage()
{
    const auto t0 = Clock::now();
    int covered = 0;
    int selected = 0;
    for (int rep = 1; rep <= 100; ++rep) {
        datagen::ScenarioSpec spec;
        spec.N = 60;
        spec.T = 6;
        spec.p = 10;
        spec.support = {0};
        spec.beta = {1.0};
        spec.seed = static_cast<std::uint64_t>(1000 + rep);
        const auto s = datagen::generate(spec);
        pipeline::PipelineConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(rep);
        cfg.threads = workers();
        cfg.imputation.M = 1;
        cfg.random_lasso.B = 20;
        cfg.bca_resamples = 500;
        cfg.ci_level = 0.90;
        const auto r = pipeline::run_pipeline(s.panel, cfg);
        for (const auto& ci : r.intervals) {
            if (ci.variable == 0) {
                ++selected;
                covered += ci.lower <= 1.0 && 1.0 <= ci.upper ? 1 : 0;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {covered >= 80 && secs <= 600.0, std::to_string(covered) + "/100 intervals cover the truth (" +
                                                 std::to_string(selected) + " selected), " + fmt(secs, 0) + " s"};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism()
{
    const auto dir = fs::temp_directory_path() / "amirl_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto s = datagen::generate(stress_spec(1));
    {
        std::ofstream f(dir / "panel.csv");
        write_wide_csv(f, s.panel);
    }
    std::map<int, std::string> reports;
    for (int threads : {1, 8}) {
        const auto out = dir / ("t" + std::to_string(threads));
        const std::string cmd = std::string("'") + AMIRL_CLI_PATH + "' fit '" + (dir / "panel.csv").string() +
                                "' --target y --mode amirl --criterion aic -M 5 -B 50 --seed 1 --threads " +
                                std::to_string(threads) + " --out '" + out.string() + "' >/dev/null";
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            return {false, "fit with --threads " + std::to_string(threads) + " failed"};
        }
        for (const char* f : {"report.json", "coefficients.csv", "stability.csv", "diagnostics.csv"}) {
            reports[threads] += slurp(out / f);
        }
    }
    fs::remove_all(dir);
    const bool same = reports[1] == reports[8] && !reports[1].empty();
    return {same, std::string("report, coefficient, stability and diagnostics files ") +
                      (same ? "byte-identical" : "DIFFER") + " for --threads 1 and 8"};
}

Verdict baseline_ordering()
{
    const auto& runs = stress_runs();
    double sel_base = 0.0;
    double sel_amirl = 0.0;
    double fp_base = 0.0;
    double fp_amirl = 0.0;
    for (const auto& r : runs) {
        const std::vector<Index> support(r.spec.support.begin(), r.spec.support.end());
        const auto base = pipeline::run_pipeline(
            r.scenario.panel, stress_config(r.spec.seed, pipeline::Mode::lasso_ols_meanimpute));
        sel_base += static_cast<double>(base.stable_set.size());
        sel_amirl += static_cast<double>(r.amirl.stable_set.size());
        fp_base += static_cast<double>(score(base.stable_set, support).fp);
        fp_amirl += static_cast<double>(score(r.amirl.stable_set, support).fp);
    }
    const double n = static_cast<double>(runs.size());
    return {sel_base > sel_amirl && fp_base >= fp_amirl,
            "mean selected " + fmt(sel_base / n, 2) + " (lasso-OLS) vs " + fmt(sel_amirl / n, 2) +
                " (aMIRL), mean FP " + fmt(fp_base / n, 2) + " vs " + fmt(fp_amirl / n, 2)};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"window-selection arithmetic", window_arithmetic},
        {"lasso solver oracle equivalence", lasso_oracle},
        {"exact-recovery smoke test", exact_recovery},
        {"support recovery under stress", support_recovery},
        {"imputation fidelity", imputation_fidelity},
        {"RE-EM correctness limits", reem_limits},
        {"information criteria by hand", information_criteria},
        {"BCa coverage", bca_coverage},
        {"determinism", determinism},
        {"baseline ordering", baseline_ordering},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        wanted.insert(std::atoi(argv[i]));
    }
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!wanted.empty() && wanted.count(id) == 0) {
            continue;
        }
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("criterion %2d %-34s %s  %s\n", id, criteria[k].first.c_str(), v.pass ? "PASS" : "FAIL",
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
