#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "amirl/csv.hpp"
#include "amirl/error.hpp"

namespace amirl {

using Eigen::Index;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class VariableKind { continuous, binary };
enum class VariableRole { target, covariate, excluded };

struct Variable {
    std::string name;
    VariableKind kind = VariableKind::continuous;
    VariableRole role = VariableRole::covariate;
};

/// Unit x time x variable table stored as one row per (unit, time) observation.
/// For a balanced panel row r belongs to unit r / T and period r % T.
/// Unobserved cells hold NaN in `values` and false in `mask`.
struct PanelDataset {
    std::vector<std::string> unit_ids;
    std::vector<int> time_points;
    std::vector<Variable> variables;
    std::vector<Index> row_unit;
    std::vector<Index> row_time;
    Eigen::MatrixXd values;
    MaskMatrix mask;

    [[nodiscard]] Index n_units() const { return static_cast<Index>(unit_ids.size()); }
    [[nodiscard]] Index n_periods() const { return static_cast<Index>(time_points.size()); }
    [[nodiscard]] Index n_rows() const { return values.rows(); }
    [[nodiscard]] Index n_vars() const { return static_cast<Index>(variables.size()); }

    [[nodiscard]] bool is_balanced() const
    {
        const Index t = n_periods();
        if (n_rows() != n_units() * t) {
            return false;
        }
        for (Index r = 0; r < n_rows(); ++r) {
            if (row_unit[r] != r / t || row_time[r] != r % t) {
                return false;
            }
        }
        return true;
    }

    [[nodiscard]] Index variable_index(std::string_view name) const
    {
        for (Index k = 0; k < n_vars(); ++k) {
            if (variables[k].name == name) {
                return k;
            }
        }
        throw UnknownVariableError(std::string(name));
    }

    [[nodiscard]] Index target_index() const
    {
        for (Index k = 0; k < n_vars(); ++k) {
            if (variables[k].role == VariableRole::target) {
                return k;
            }
        }
        throw ConfigError("no target variable assigned");
    }

    /// Covariates in column order; excluded variables and the target are skipped.
    [[nodiscard]] std::vector<Index> regressor_indices() const
    {
        std::vector<Index> out;
        for (Index k = 0; k < n_vars(); ++k) {
            if (variables[k].role == VariableRole::covariate) {
                out.push_back(k);
            }
        }
        return out;
    }

    [[nodiscard]] Index missing_count() const { return (!mask).count(); }

    void validate() const
    {
        if (mask.rows() != values.rows() || mask.cols() != values.cols()) {
            throw InputError("mask and values differ in shape");
        }
        if (values.cols() != n_vars()) {
            throw InputError("value columns do not match variable list");
        }
        if (static_cast<Index>(row_unit.size()) != n_rows() ||
            static_cast<Index>(row_time.size()) != n_rows()) {
            throw InputError("row index vectors do not match value rows");
        }
        for (Index k = 0; k < n_vars(); ++k) {
            for (Index r = 0; r < n_rows(); ++r) {
                if (!mask(r, k)) {
                    continue;
                }
                const double v = values(r, k);
                if (!std::isfinite(v)) {
                    throw InputError("non-finite observed value in '" + variables[k].name + "'");
                }
                if (variables[k].kind == VariableKind::binary && v != 0.0 && v != 1.0) {
                    throw InputError("binary variable '" + variables[k].name +
                                     "' has value outside {0,1}");
                }
            }
        }
    }
};

/// Marks every variable whose observed values all lie in {0,1} as binary.
inline void infer_kinds(PanelDataset& data)
{
    for (Index k = 0; k < data.n_vars(); ++k) {
        bool binary = true;
        Index observed = 0;
        for (Index r = 0; r < data.n_rows() && binary; ++r) {
            if (data.mask(r, k)) {
                ++observed;
                const double v = data.values(r, k);
                binary = (v == 0.0 || v == 1.0);
            }
        }
        data.variables[k].kind =
            (binary && observed > 0) ? VariableKind::binary : VariableKind::continuous;
    }
}

// ---------------------------------------------------------------------------
// Long-format ingestion and balanced-window selection
// ---------------------------------------------------------------------------

struct LongTable {
    std::vector<std::string> units;      // first-appearance order
    std::vector<std::string> variables;  // first-appearance order
    struct Record {
        Index unit;
        int year;
        Index variable;
        std::optional<double> value;
    };
    std::vector<Record> records;

    [[nodiscard]] bool empty() const { return records.empty(); }

    [[nodiscard]] Index variable_index(std::string_view name) const
    {
        for (std::size_t k = 0; k < variables.size(); ++k) {
            if (variables[k] == name) {
                return static_cast<Index>(k);
            }
        }
        throw UnknownVariableError(std::string(name));
    }
};

inline LongTable parse_long_table(const csv::Table& t)
{
    const auto cu = t.column("unit");
    const auto cy = t.column("year");
    const auto cv = t.column("variable");
    const auto cval = t.column("value");
    LongTable out;
    if (t.header.empty() && t.rows.empty()) {
        return out;
    }
    if (!cu || !cy || !cv || !cval) {
        throw InputError("long format requires columns unit,year,variable,value");
    }
    std::unordered_map<std::string, Index> unit_ix;
    std::unordered_map<std::string, Index> var_ix;
    out.records.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        auto [uit, unew] = unit_ix.try_emplace(row[*cu], static_cast<Index>(out.units.size()));
        if (unew) {
            out.units.push_back(row[*cu]);
        }
        auto [vit, vnew] = var_ix.try_emplace(row[*cv], static_cast<Index>(out.variables.size()));
        if (vnew) {
            out.variables.push_back(row[*cv]);
        }
        out.records.push_back({uit->second, csv::parse_int(row[*cy]), vit->second,
                               csv::parse_number(row[*cval])});
    }
    return out;
}

inline LongTable read_long_csv(const std::string& path)
{
    return parse_long_table(csv::read_file(path));
}

struct WindowCandidate {
    int start_year = 0;
    int end_year = 0;
    Index n_units = 0;
    Index panel_size = 0;

    [[nodiscard]] int length() const { return end_year - start_year + 1; }
    bool operator==(const WindowCandidate&) const = default;
};

/// Decides whether one unit counts as available in one year, given all of its
/// cells for that year (indexed like LongTable::variables; nullopt = missing).
using AvailabilityPredicate = std::function<bool(std::span<const std::optional<double>>)>;

/// At least one observed, non-zero value among all variables.
inline AvailabilityPredicate any_nonzero()
{
    return [](std::span<const std::optional<double>> cells) {
        return std::any_of(cells.begin(), cells.end(),
                           [](const auto& c) { return c.has_value() && *c != 0.0; });
    };
}

/// Every listed variable observed and non-zero, plus at least one non-zero value overall.
inline AvailabilityPredicate require_nonzero(std::vector<Index> required)
{
    return [required = std::move(required)](std::span<const std::optional<double>> cells) {
        for (Index k : required) {
            const auto& c = cells[static_cast<std::size_t>(k)];
            if (!c.has_value() || *c == 0.0) {
                return false;
            }
        }
        return std::any_of(cells.begin(), cells.end(),
                           [](const auto& c) { return c.has_value() && *c != 0.0; });
    };
}

namespace detail {

struct Availability {
    int first_year = 0;
    int n_years = 0;
    std::vector<std::vector<char>> by_unit;  // [unit][year - first_year]
};

inline Availability availability(const LongTable& table, const AvailabilityPredicate& pred)
{
    Availability a;
    int lo = std::numeric_limits<int>::max();
    int hi = std::numeric_limits<int>::min();
    for (const auto& rec : table.records) {
        lo = std::min(lo, rec.year);
        hi = std::max(hi, rec.year);
    }
    a.first_year = lo;
    a.n_years = hi - lo + 1;
    const std::size_t nv = table.variables.size();
    // cells[unit][year] -> values per variable
    std::vector<std::vector<std::vector<std::optional<double>>>> cells(
        table.units.size(), std::vector<std::vector<std::optional<double>>>(
                                static_cast<std::size_t>(a.n_years)));
    for (const auto& rec : table.records) {
        auto& slot = cells[static_cast<std::size_t>(rec.unit)]
                          [static_cast<std::size_t>(rec.year - lo)];
        if (slot.empty()) {
            slot.resize(nv);
        }
        slot[static_cast<std::size_t>(rec.variable)] = rec.value;
    }
    a.by_unit.assign(table.units.size(), std::vector<char>(static_cast<std::size_t>(a.n_years), 0));
    for (std::size_t u = 0; u < table.units.size(); ++u) {
        for (int y = 0; y < a.n_years; ++y) {
            const auto& slot = cells[u][static_cast<std::size_t>(y)];
            a.by_unit[u][static_cast<std::size_t>(y)] = !slot.empty() && pred(slot);
        }
    }
    return a;
}

} // namespace detail

/// Ranks every window [start, end] by the rule: among windows whose panel size
/// is at least (1 - slack) times the largest, prefer longer windows, then
/// larger panels, then earlier starts. Remaining windows follow, ordered by
/// panel size, length, start. Windows shorter than min_length or without
/// available units are not listed.
inline std::vector<WindowCandidate> select_balanced_window(
    const LongTable& table, int min_length = 2, double slack = 0.01,
    const AvailabilityPredicate& pred = any_nonzero())
{
    if (table.empty()) {
        throw InputError("no data");
    }
    if (slack < 0.0 || slack >= 1.0) {
        throw ConfigError("slack must lie in [0, 1)");
    }
    const auto avail = detail::availability(table, pred);
    const int ny = avail.n_years;
    std::vector<Index> counts(static_cast<std::size_t>(ny * ny), 0);
    for (const auto& row : avail.by_unit) {
        for (int s = 0; s < ny; ++s) {
            for (int e = s; e < ny && row[static_cast<std::size_t>(e)]; ++e) {
                ++counts[static_cast<std::size_t>(s * ny + e)];
            }
        }
    }
    std::vector<WindowCandidate> all;
    for (int s = 0; s < ny; ++s) {
        for (int e = s; e < ny; ++e) {
            const Index n = counts[static_cast<std::size_t>(s * ny + e)];
            const int len = e - s + 1;
            if (n == 0 || len < std::max(min_length, 1)) {
                continue;
            }
            all.push_back({avail.first_year + s, avail.first_year + e, n, n * len});
        }
    }
    if (all.empty()) {
        throw InputError("no feasible window");
    }
    Index best = 0;
    for (const auto& w : all) {
        best = std::max(best, w.panel_size);
    }
    const double floor_size = (1.0 - slack) * static_cast<double>(best);
    auto eligible = [&](const WindowCandidate& w) {
        return static_cast<double>(w.panel_size) >= floor_size;
    };
    std::sort(all.begin(), all.end(), [&](const WindowCandidate& a, const WindowCandidate& b) {
        const bool ea = eligible(a);
        const bool eb = eligible(b);
        if (ea != eb) {
            return ea;
        }
        if (ea) {
            if (a.length() != b.length()) return a.length() > b.length();
            if (a.panel_size != b.panel_size) return a.panel_size > b.panel_size;
        } else {
            if (a.panel_size != b.panel_size) return a.panel_size > b.panel_size;
            if (a.length() != b.length()) return a.length() > b.length();
        }
        return a.start_year < b.start_year;
    });
    return all;
}

/// Balanced panel of the units available in every year of the window.
inline PanelDataset extract_window(const LongTable& table, const WindowCandidate& window,
                                   const AvailabilityPredicate& pred = any_nonzero())
{
    const auto avail = detail::availability(table, pred);
    PanelDataset out;
    for (int y = window.start_year; y <= window.end_year; ++y) {
        out.time_points.push_back(y);
    }
    std::vector<Index> slot(table.units.size(), -1);
    for (std::size_t u = 0; u < table.units.size(); ++u) {
        bool ok = true;
        for (int y = window.start_year; y <= window.end_year && ok; ++y) {
            const int off = y - avail.first_year;
            ok = off >= 0 && off < avail.n_years && avail.by_unit[u][static_cast<std::size_t>(off)];
        }
        if (ok) {
            slot[u] = out.n_units();
            out.unit_ids.push_back(table.units[u]);
        }
    }
    for (const auto& name : table.variables) {
        out.variables.push_back({name, VariableKind::continuous, VariableRole::covariate});
    }
    const Index t = out.n_periods();
    const Index rows = out.n_units() * t;
    out.values = Eigen::MatrixXd::Constant(rows, out.n_vars(), std::numeric_limits<double>::quiet_NaN());
    out.mask = MaskMatrix::Constant(rows, out.n_vars(), false);
    for (Index r = 0; r < rows; ++r) {
        out.row_unit.push_back(r / t);
        out.row_time.push_back(r % t);
    }
    for (const auto& rec : table.records) {
        const Index s = slot[static_cast<std::size_t>(rec.unit)];
        if (s < 0 || rec.year < window.start_year || rec.year > window.end_year) {
            continue;
        }
        const Index r = s * t + (rec.year - window.start_year);
        if (rec.value) {
            out.values(r, rec.variable) = *rec.value;
            out.mask(r, rec.variable) = true;
        }
    }
    infer_kinds(out);
    return out;
}

// ---------------------------------------------------------------------------
// Wide-format ingestion and output
// ---------------------------------------------------------------------------

inline PanelDataset parse_wide_table(const csv::Table& t, std::string_view unit_col = "unit",
                                     std::string_view time_col = "year")
{
    if (t.rows.empty()) {
        throw InputError("no data");
    }
    const auto cu = t.column(unit_col);
    const auto ct = t.column(time_col);
    if (!cu || !ct) {
        throw InputError("wide format requires columns '" + std::string(unit_col) + "' and '" +
                         std::string(time_col) + "'");
    }
    PanelDataset out;
    std::vector<std::size_t> var_cols;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (c == *cu || c == *ct) {
            continue;
        }
        var_cols.push_back(c);
        out.variables.push_back({t.header[c], VariableKind::continuous, VariableRole::covariate});
    }
    std::unordered_map<std::string, Index> unit_ix;
    std::vector<int> years;
    struct Raw {
        Index unit;
        int year;
        std::size_t source;
    };
    std::vector<Raw> raw;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        auto [it, fresh] = unit_ix.try_emplace(row[*cu], out.n_units());
        if (fresh) {
            out.unit_ids.push_back(row[*cu]);
        }
        const int y = csv::parse_int(row[*ct]);
        years.push_back(y);
        raw.push_back({it->second, y, i});
    }
    std::sort(years.begin(), years.end());
    years.erase(std::unique(years.begin(), years.end()), years.end());
    out.time_points = years;
    std::sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) {
        return a.unit != b.unit ? a.unit < b.unit : a.year < b.year;
    });
    for (std::size_t i = 1; i < raw.size(); ++i) {
        if (raw[i].unit == raw[i - 1].unit && raw[i].year == raw[i - 1].year) {
            throw InputError("duplicate row for unit '" + out.unit_ids[raw[i].unit] + "' year " +
                             std::to_string(raw[i].year));
        }
    }
    const Index rows = static_cast<Index>(raw.size());
    out.values = Eigen::MatrixXd::Constant(rows, out.n_vars(), std::numeric_limits<double>::quiet_NaN());
    out.mask = MaskMatrix::Constant(rows, out.n_vars(), false);
    for (Index r = 0; r < rows; ++r) {
        const auto& src = t.rows[raw[r].source];
        out.row_unit.push_back(raw[r].unit);
        out.row_time.push_back(std::lower_bound(years.begin(), years.end(), raw[r].year) - years.begin());
        for (Index k = 0; k < out.n_vars(); ++k) {
            if (auto v = csv::parse_number(src[var_cols[k]])) {
                out.values(r, k) = *v;
                out.mask(r, k) = true;
            }
        }
    }
    infer_kinds(out);
    return out;
}

inline PanelDataset read_wide_csv(const std::string& path, std::string_view unit_col = "unit",
                                  std::string_view time_col = "year")
{
    return parse_wide_table(csv::read_file(path), unit_col, time_col);
}

/// Writes one row per observation. `values` defaults to the dataset's own
/// values; unobserved cells are written empty unless `values` fills them.
inline void write_wide_csv(std::ostream& out, const PanelDataset& data,
                           const Eigen::MatrixXd* values = nullptr, std::optional<int> m = {},
                           bool header = true)
{
    const Eigen::MatrixXd& v = values ? *values : data.values;
    if (header) {
        std::vector<std::string> h;
        if (m) {
            h.emplace_back("m");
        }
        h.emplace_back("unit");
        h.emplace_back("year");
        for (const auto& var : data.variables) {
            h.push_back(var.name);
        }
        csv::write_row(out, h);
    }
    for (Index r = 0; r < data.n_rows(); ++r) {
        std::vector<std::string> f;
        if (m) {
            f.push_back(std::to_string(*m));
        }
        f.push_back(data.unit_ids[data.row_unit[r]]);
        f.push_back(std::to_string(data.time_points[data.row_time[r]]));
        for (Index k = 0; k < data.n_vars(); ++k) {
            const bool show = values ? true : static_cast<bool>(data.mask(r, k));
            f.push_back(show ? csv::format_number(v(r, k)) : std::string());
        }
        csv::write_row(out, f);
    }
}

inline void write_long_csv(std::ostream& out, const PanelDataset& data)
{
    csv::write_row(out, {"unit", "year", "variable", "value"});
    for (Index r = 0; r < data.n_rows(); ++r) {
        for (Index k = 0; k < data.n_vars(); ++k) {
            csv::write_row(out, {data.unit_ids[data.row_unit[r]],
                                 std::to_string(data.time_points[data.row_time[r]]),
                                 data.variables[k].name,
                                 data.mask(r, k) ? csv::format_number(data.values(r, k)) : ""});
        }
    }
}

// ---------------------------------------------------------------------------
// Transformations on complete data
// ---------------------------------------------------------------------------

struct DemeanedPanel {
    Eigen::MatrixXd values;      // rows = units * periods
    Eigen::MatrixXd unit_means;  // units x columns
    Index n_units = 0;
    Index n_periods = 0;
};

/// Subtracts each unit's time average from every column. Rows must be
/// unit-major (balanced layout).
inline DemeanedPanel within_transform(const Eigen::MatrixXd& values, Index n_units, Index n_periods)
{
    if (n_periods < 2) {
        throw InputError("fixed effect unidentifiable: fewer than 2 periods per unit");
    }
    if (values.rows() != n_units * n_periods) {
        throw std::invalid_argument("within_transform: rows != units * periods");
    }
    if (!values.allFinite()) {
        throw InputError("within_transform requires complete data");
    }
    DemeanedPanel out;
    out.n_units = n_units;
    out.n_periods = n_periods;
    out.values.resize(values.rows(), values.cols());
    out.unit_means.resize(n_units, values.cols());
    for (Index i = 0; i < n_units; ++i) {
        const auto block = values.middleRows(i * n_periods, n_periods);
        const Eigen::RowVectorXd mean = block.colwise().mean();
        out.unit_means.row(i) = mean;
        out.values.middleRows(i * n_periods, n_periods) = block.rowwise() - mean;
    }
    return out;
}

struct Standardized {
    Eigen::MatrixXd values;
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
};

/// Centers each column and scales it to unit sample standard deviation (n - 1).
inline Standardized standardize(const Eigen::MatrixXd& columns,
                                std::span<const std::string> names = {})
{
    const Index n = columns.rows();
    if (n < 2) {
        throw InputError("standardize needs at least two rows");
    }
    Standardized out;
    out.mean = columns.colwise().mean().transpose();
    out.values = columns.rowwise() - out.mean.transpose();
    out.sd.resize(columns.cols());
    for (Index k = 0; k < columns.cols(); ++k) {
        const double sd = std::sqrt(out.values.col(k).squaredNorm() / static_cast<double>(n - 1));
        if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(out.mean(k)))) {
            const std::string name = k < static_cast<Index>(names.size())
                                         ? names[static_cast<std::size_t>(k)]
                                         : "column " + std::to_string(k);
            throw InputError("constant column '" + name + "' cannot be standardized");
        }
        out.sd(k) = sd;
        out.values.col(k) /= sd;
    }
    return out;
}

/// alpha_i = ybar_i - xbar_i' beta.
inline Eigen::VectorXd recover_fixed_effects(const Eigen::VectorXd& beta,
                                             const Eigen::VectorXd& y_unit_means,
                                             const Eigen::MatrixXd& x_unit_means)
{
    if (x_unit_means.cols() != beta.size() || x_unit_means.rows() != y_unit_means.size()) {
        throw std::invalid_argument("recover_fixed_effects: dimension mismatch");
    }
    return y_unit_means - x_unit_means * beta;
}

} // namespace amirl
