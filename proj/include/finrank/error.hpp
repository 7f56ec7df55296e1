#pragma once

#include <stdexcept>
#include <string>

namespace finrank {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: malformed files, dangling ids, contract violations on inputs.
class DataError : public Error {
public:
    using Error::Error;
};

/// Caller passed arguments that violate an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// NaN/Inf detected in a loss, activation or gradient.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Binary file problems. The kind distinguishes corruption from version skew.
class FormatError : public DataError {
public:
    enum class Kind { bad_magic, unsupported_version, truncated, malformed };

    FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace finrank
