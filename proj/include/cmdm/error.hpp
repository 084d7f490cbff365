#pragma once

#include <stdexcept>
#include <string>

namespace cmdm {

// Three failure classes, mirrored by the CLI exit codes 1/2/3.

/// Caller passed arguments that violate a documented precondition.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data is malformed, truncated or inconsistent.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A computation produced non-finite values or a decomposition failed.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

} // namespace cmdm
