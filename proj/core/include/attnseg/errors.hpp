#pragma once

#include <stdexcept>
#include <string>

namespace attnseg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree. `axis` names the offending dimension ("n", "c", "h", "w", ...).
class DimensionError : public Error {
public:
    DimensionError(std::string axis, const std::string& what)
        : Error(what), axis_(std::move(axis)) {}

    const std::string& axis() const noexcept { return axis_; }

private:
    std::string axis_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input data: bad labels, unknown mask colors, out-of-bounds tiles.
class DataError : public Error {
public:
    using Error::Error;
};

/// A file or directory the operation depends on does not exist.
class MissingDataError : public Error {
public:
    using Error::Error;
};

/// Operation called in the wrong lifecycle state (backward without forward, eval before train stats).
class StateError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Loss has no scored pixel (every target ignored or weighted zero).
class UndefinedLossError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Metric has no defined value for the given confusion matrix.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace attnseg
