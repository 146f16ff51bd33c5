#pragma once

#include <cmath>
#include <complex>
#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace windgrid {

using Real = double;
using Complex = std::complex<Real>;

inline constexpr Real kPi = 3.14159265358979323846;

/// Thrown for malformed input files and inconsistent case data.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a numerical routine cannot produce a usable result
/// (initialization mismatch, non-converging solve, singular system).
class NumericsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// printf-style formatting into a std::string.
inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    const int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
    if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    va_end(args);
    return out;
}

[[nodiscard]] inline bool nearly_equal(Real a, Real b, Real tol = 1e-12) {
    return std::abs(a - b) <= tol * std::max({Real(1), std::abs(a), std::abs(b)});
}

/// Infinity norm of a vector; 0 for empty input.
[[nodiscard]] inline Real inf_norm(const std::vector<Real>& v) {
    Real m = 0.0;
    for (Real x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace windgrid
