#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace amirl {

/// Failure category. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
    input = 2,
    config = 3,
    numerical = 4,
    unknown_variable = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class UnknownVariableError : public Error {
public:
    explicit UnknownVariableError(const std::string& name)
        : Error(ErrorKind::unknown_variable, "unknown variable '" + name + "'"), name_(name) {}
    [[nodiscard]] const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Coordinate descent hit its sweep cap; carries the last iterate.
class LassoConvergenceError : public NumericalError {
public:
    LassoConvergenceError(const std::string& what, Eigen::VectorXd last)
        : NumericalError(what), last_(std::move(last)) {}
    [[nodiscard]] const Eigen::VectorXd& last_iterate() const noexcept { return last_; }

private:
    Eigen::VectorXd last_;
};

/// Variance-ratio search hit its iteration cap; carries the last ratio.
class LmmConvergenceError : public NumericalError {
public:
    LmmConvergenceError(const std::string& what, double last_ratio)
        : NumericalError(what), last_ratio_(last_ratio) {}
    [[nodiscard]] double last_ratio() const noexcept { return last_ratio_; }

private:
    double last_ratio_;
};

} // namespace amirl
