#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace mpb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: shapes, ranges, file headers, config fields.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical routine could not produce a trustworthy answer
/// (rank deficiency, indefinite matrices, non-finite values).
class NumericalError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

/// Compact %g rendering for error messages (std::to_string prints fixed-point).
inline std::string format_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace detail
}  // namespace mpb
