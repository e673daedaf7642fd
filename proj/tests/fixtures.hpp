#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "amirl/panel.hpp"

namespace fixtures {

/// Units grouped by their availability interval [first, last] within 2009-2014.
/// Counts give 213 units over 2009-2014 and 321 over 2011-2014.
inline const std::vector<std::pair<std::pair<int, int>, int>>& availability_intervals()
{
    static const std::vector<std::pair<std::pair<int, int>, int>> intervals = {
        {{2009, 2014}, 213}, {{2009, 2013}, 19}, {{2009, 2012}, 39}, {{2009, 2011}, 37},
        {{2009, 2010}, 10},  {{2009, 2009}, 12}, {{2010, 2014}, 15}, {{2010, 2013}, 6},
        {{2010, 2012}, 12},  {{2010, 2011}, 23}, {{2010, 2010}, 1},  {{2011, 2014}, 93},
        {{2011, 2013}, 21},  {{2011, 2012}, 41}, {{2011, 2011}, 33}, {{2012, 2014}, 75},
        {{2012, 2013}, 19},  {{2012, 2012}, 59}, {{2013, 2014}, 125}, {{2013, 2013}, 31},
        {{2014, 2014}, 150},
    };
    return intervals;
}

/// Long table with one record per (unit, year, variable) over 2009-2014.
/// Available years carry a non-zero value; other years are missing or zero.
inline amirl::LongTable availability_table()
{
    amirl::LongTable t;
    t.variables = {"loans", "borrowers"};
    int id = 0;
    for (const auto& [interval, count] : availability_intervals()) {
        for (int c = 0; c < count; ++c) {
            const auto unit = static_cast<Eigen::Index>(t.units.size());
            t.units.push_back("mfi" + std::to_string(id++));
            for (int year = 2009; year <= 2014; ++year) {
                const bool on = year >= interval.first && year <= interval.second;
                // Unavailable years alternate between fully missing and all-zero rows.
                std::optional<double> v;
                if (on) {
                    v = 1.0 + year - 2009;
                } else if ((id + year) % 2 == 0) {
                    v = 0.0;
                }
                t.records.push_back({unit, year, 0, v});
                t.records.push_back({unit, year, 1, on ? std::optional<double>(0.0) : std::nullopt});
            }
        }
    }
    return t;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> z;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = z(rng);
        }
    }
    return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng)
{
    return random_matrix(n, 1, rng).col(0);
}

/// Balanced panel with rows ordered unit-major; NaN cells are missing.
inline amirl::PanelDataset make_panel(const Eigen::MatrixXd& values, Eigen::Index units,
                                      const std::vector<std::string>& names, Eigen::Index target = 0)
{
    amirl::PanelDataset d;
    const Eigen::Index periods = values.rows() / units;
    for (Eigen::Index i = 0; i < units; ++i) {
        d.unit_ids.push_back("u" + std::to_string(i + 1));
    }
    for (Eigen::Index t = 0; t < periods; ++t) {
        d.time_points.push_back(2000 + static_cast<int>(t));
    }
    for (const auto& n : names) {
        d.variables.push_back({n, amirl::VariableKind::continuous, amirl::VariableRole::covariate});
    }
    if (target >= 0) {
        d.variables[static_cast<std::size_t>(target)].role = amirl::VariableRole::target;
    }
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        d.row_unit.push_back(r / periods);
        d.row_time.push_back(r % periods);
    }
    d.values = values;
    d.mask = values.array().isFinite();
    amirl::infer_kinds(d);
    return d;
}

} // namespace fixtures
