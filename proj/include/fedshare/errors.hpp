#pragma once

#include <stdexcept>
#include <string>

namespace fedshare {

// Bad inputs: malformed distributions, inconsistent sizes, out-of-range knobs.
// CLI maps this family to exit code 2.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Mismatched vector/matrix shapes. A flavor of validation.
class dimension_error : public validation_error {
public:
    explicit dimension_error(const std::string& what) : validation_error(what) {}
};

// Guard against combinatorial blowups (exhaustive search, grids).
class size_guard_error : public validation_error {
public:
    explicit size_guard_error(const std::string& what) : validation_error(what) {}
};

// A constraint cannot be met: energy budget below upload cost, zero-rate link
// with positive traffic, empty feasible set. CLI maps to exit code 3.
class infeasibility_error : public std::runtime_error {
public:
    explicit infeasibility_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown: singular fit, non-positive rounds-law denominator,
// divergence, non-finite values. CLI maps to exit code 4.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace fedshare
