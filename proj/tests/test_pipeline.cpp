#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "amirl/datagen.hpp"
#include "amirl/pipeline.hpp"
#include "amirl/report.hpp"

using namespace amirl;
using namespace amirl::pipeline;

namespace {

PipelineConfig quick_config(Mode mode = Mode::amirl)
{
    PipelineConfig cfg;
    cfg.mode = mode;
    cfg.seed = 5;
    cfg.imputation.M = 2;
    cfg.imputation.cycles = 3;
    cfg.random_lasso.B = 20;
    cfg.random_lasso.grid_size = 30;
    cfg.intervals = false;
    return cfg;
}

datagen::ScenarioSpec small_spec(double missing = 0.1)
{
    datagen::ScenarioSpec s;
    s.N = 30;
    s.T = 4;
    s.p = 12;
    s.support = {0, 4, 8};
    s.beta = {1.0, -0.8, 0.6};
    s.missing_rate = missing;
    s.seed = 3;
    return s;
}

std::vector<Index> support_of(const datagen::ScenarioSpec& s)
{
    return {s.support.begin(), s.support.end()};
}

/// Regressor columns (everything after the target) and the target.
Eigen::MatrixXd regressors(const PanelDataset& d)
{
    return d.values.rightCols(d.n_vars() - 1);
}

Eigen::MatrixXd demean_units(const Eigen::MatrixXd& v, const PanelDataset& d)
{
    Eigen::MatrixXd out = v;
    const Index T = d.n_periods();
    for (Index i = 0; i < d.n_units(); ++i) {
        out.middleRows(i * T, T).rowwise() -= v.middleRows(i * T, T).colwise().mean();
    }
    return out;
}

} // namespace

TEST(Pipeline, IdenticalReportsAcrossThreadCounts)
{
    const auto s = datagen::generate(small_spec());
    auto cfg = quick_config();
    cfg.intervals = true;
    cfg.bca_resamples = 200;
    cfg.threads = 1;
    const auto a = run_pipeline(s.panel, cfg);
    cfg.threads = 4;
    const auto b = run_pipeline(s.panel, cfg);
    EXPECT_EQ(report::report_json(a, s.panel, cfg, "x.csv").dump(),
              report::report_json(b, s.panel, cfg, "x.csv").dump());
    EXPECT_FALSE(a.intervals.empty());
}

TEST(Pipeline, NoiselessDataRecoverSupportInBothModes)
{
    auto spec = small_spec(0.0);
    spec.N = 40;
    spec.T = 5;
    spec.sigma_eps = 0.0;
    spec.sigma_alpha = 0.0;
    const auto s = datagen::generate(spec);
    for (Mode mode : {Mode::amirl, Mode::mirl_pooled}) {
        const auto r = run_pipeline(s.panel, quick_config(mode));
        EXPECT_EQ(r.stable_set, support_of(spec)) << to_string(mode);
    }
}

TEST(Pipeline, FinalEstimateMasksInitial)
{
    const auto s = datagen::generate(small_spec());
    const auto r = run_pipeline(s.panel, quick_config());
    for (Index j = 0; j < r.b_init.size(); ++j) {
        const bool in = std::find(r.stable_set.begin(), r.stable_set.end(), j) != r.stable_set.end();
        EXPECT_EQ(in, r.pi_hat(j) >= r.pi_star);
        EXPECT_GE(r.pi_hat(j), 0.0);
        EXPECT_LE(r.pi_hat(j), 1.0);
        if (in) {
            EXPECT_EQ(r.b_final(j), r.b_init(j));
            EXPECT_EQ(r.b_final_std(j), r.b_init_std(j));
        } else {
            EXPECT_EQ(r.b_final(j), 0.0);
        }
    }
}

TEST(Pipeline, FixedEffectsAndOriginalScale)
{
    const auto spec = small_spec(0.0);
    const auto s = datagen::generate(spec);
    const auto r = run_pipeline(s.panel, quick_config());
    ASSERT_FALSE(r.stable_set.empty());
    // Post-selection coefficients on the original scale are the within OLS on the selected columns.
    const Eigen::MatrixXd X = demean_units(regressors(s.panel), s.panel);
    const Eigen::VectorXd y = demean_units(s.panel.values.col(0), s.panel);
    const Eigen::MatrixXd Xs = X(Eigen::all, r.stable_set);
    const Eigen::VectorXd bs = Xs.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < r.stable_set.size(); ++k) {
        // b_final averages bootstrap refits, so it is close to but not equal to this.
        EXPECT_NEAR(r.b_final(r.stable_set[k]), bs(static_cast<Index>(k)), 0.15);
    }
    const Eigen::MatrixXd L = regressors(s.panel);
    const Index T = spec.T;
    ASSERT_EQ(r.fixed_effects.size(), spec.N);
    for (Index i = 0; i < spec.N; ++i) {
        const double alpha = s.panel.values.col(0).segment(i * T, T).mean() -
                             L.middleRows(i * T, T).colwise().mean().dot(r.b_final);
        EXPECT_NEAR(r.fixed_effects(i), alpha, 1e-10);
    }
    EXPECT_FALSE(r.intercept.has_value());
}

TEST(Pipeline, PooledModeUsesCommonIntercept)
{
    const auto s = datagen::generate(small_spec(0.0));
    const auto r = run_pipeline(s.panel, quick_config(Mode::mirl_pooled));
    ASSERT_TRUE(r.intercept.has_value());
    EXPECT_EQ(r.fixed_effects.size(), 0);
    const Eigen::MatrixXd L = regressors(s.panel);
    const double expected = s.panel.values.col(0).mean() - L.colwise().mean().dot(r.b_final);
    EXPECT_NEAR(*r.intercept, expected, 1e-10);
}

TEST(Pipeline, BaselineIsWithinLassoOls)
{
    const auto s = datagen::generate(small_spec(0.0));
    const auto r = run_pipeline(s.panel, quick_config(Mode::lasso_ols_meanimpute));
    EXPECT_EQ(r.M, 1);
    EXPECT_EQ(r.pi_hat.size(), 0);
    ASSERT_TRUE(r.lambda_selected.has_value());
    EXPECT_EQ(r.b_final, r.b_init);
    ASSERT_FALSE(r.stable_set.empty());
    const Eigen::MatrixXd X = demean_units(regressors(s.panel), s.panel);
    const Eigen::VectorXd y = demean_units(s.panel.values.col(0), s.panel);
    const Eigen::VectorXd bs = X(Eigen::all, r.stable_set).colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < r.stable_set.size(); ++k) {
        EXPECT_NEAR(r.b_final(r.stable_set[k]), bs(static_cast<Index>(k)), 1e-8);
    }
}

TEST(Pipeline, MeanImputedBaselineHandlesMissingCells)
{
    const auto s = datagen::generate(small_spec(0.2));
    const auto r = run_pipeline(s.panel, quick_config(Mode::lasso_ols_meanimpute));
    EXPECT_TRUE(r.b_final.allFinite());
    EXPECT_TRUE(r.diagnostics.empty());
}

TEST(Pipeline, UnbalancedPanelRejectedForFixedEffects)
{
    auto d = datagen::generate(small_spec(0.0)).panel;
    const Index n = d.n_rows() - 1;
    d.values.conservativeResize(n, Eigen::NoChange);
    d.mask.conservativeResize(n, Eigen::NoChange);
    d.row_unit.pop_back();
    d.row_time.pop_back();
    try {
        run_pipeline(d, quick_config());
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("select-window"), std::string::npos);
    }
    EXPECT_THROW(run_pipeline(d, quick_config(Mode::lasso_ols_meanimpute)), InputError);
    const auto r = run_pipeline(d, quick_config(Mode::mirl_pooled));
    EXPECT_TRUE(r.intercept.has_value());
}

TEST(Pipeline, SinglePeriodRejected)
{
    auto spec = small_spec(0.0);
    spec.T = 1;
    spec.N = 60;
    const auto s = datagen::generate(spec);
    EXPECT_THROW(run_pipeline(s.panel, quick_config()), InputError);
}

TEST(Pipeline, IntervalsCoverStableSet)
{
    const auto s = datagen::generate(small_spec());
    auto cfg = quick_config();
    cfg.intervals = true;
    cfg.bca_resamples = 300;
    const auto r = run_pipeline(s.panel, cfg);
    ASSERT_EQ(r.intervals.size(), r.stable_set.size());
    ASSERT_EQ(r.significance.size(), r.stable_set.size());
    for (std::size_t k = 0; k < r.intervals.size(); ++k) {
        const auto& ci = r.intervals[k];
        EXPECT_EQ(ci.variable, r.stable_set[k]);
        EXPECT_LE(ci.lower, ci.upper);
        EXPECT_EQ(ci.level, 0.95);
        EXPECT_EQ(r.significance[k].at_05, ci.significant());
        EXPECT_TRUE(!r.significance[k].at_01 || r.significance[k].at_05);
        EXPECT_TRUE(!r.significance[k].at_05 || r.significance[k].at_10);
    }
    cfg.bca_resamples = 100;
    EXPECT_THROW(run_pipeline(s.panel, cfg), ConfigError);
}

TEST(Pipeline, ImputationsReusableAcrossCriteria)
{
    const auto s = datagen::generate(small_spec());
    auto cfg = quick_config();
    cfg.random_lasso.criterion = lasso::Criterion::bic;
    cfg.propagate();
    const auto imputed = impute(s.panel, cfg);
    const auto a = fit_imputed(s.panel, imputed, cfg);
    const auto b = run_pipeline(s.panel, cfg);
    EXPECT_EQ(a.b_final, b.b_final);
    EXPECT_EQ(a.pi_hat, b.pi_hat);
    EXPECT_EQ(a.criterion, lasso::Criterion::bic);
}

TEST(Report, ManifestAndCoefficientTable)
{
    const auto s = datagen::generate(small_spec());
    const auto cfg = quick_config();
    const auto r = run_pipeline(s.panel, cfg);
    const auto j = report::report_json(r, s.panel, cfg, "panel.csv");
    const auto& m = j["manifest"];
    EXPECT_EQ(m["input"], "panel.csv");
    EXPECT_EQ(m["target"], "y");
    EXPECT_EQ(m["mode"], "amirl");
    EXPECT_EQ(m["criterion"], "aic");
    EXPECT_EQ(m["M"], 2);
    EXPECT_EQ(m["B"], 20);
    EXPECT_EQ(m["seed"], 5);
    EXPECT_FALSE(m.contains("threads"));
    const auto& res = j["result"];
    EXPECT_EQ(res["coefficients"].size(), 12u);
    EXPECT_EQ(res["fixed_effects"].size(), 30u);
    EXPECT_EQ(res["stable_set"].size(), r.stable_set.size());
    EXPECT_EQ(res["stability"]["threshold_bic"].size(), r.threshold_candidates.size());

    std::ostringstream csv;
    report::write_coefficients_csv(csv, r);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    EXPECT_EQ(header, "variable,pi_hat,b_init,b_final,selected,ci_low,ci_high");
    Index rows = 0;
    for (std::string line; std::getline(lines, line);) {
        ++rows;
    }
    EXPECT_EQ(rows, 12);
}

TEST(Report, PooledTableLeadsWithIntercept)
{
    const auto s = datagen::generate(small_spec(0.0));
    const auto r = run_pipeline(s.panel, quick_config(Mode::mirl_pooled));
    std::ostringstream csv;
    report::write_coefficients_csv(csv, r);
    const auto text = csv.str();
    const auto second = text.substr(text.find('\n') + 1);
    EXPECT_EQ(second.rfind("(intercept),", 0), 0u);
    EXPECT_EQ(report::result_json(r, s.panel)["mode"], "mirl_pooled");
}
