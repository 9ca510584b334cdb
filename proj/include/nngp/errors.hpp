#pragma once

#include <stdexcept>
#include <string>

namespace nngp {

// Raised when a requested computation would exceed a configured budget
// (memory, grid size). The message names the budget that was hit.
class ResourceError : public std::runtime_error {
public:
    explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a numeric procedure fails beyond its recovery options
// (e.g. factorization of an indefinite matrix after jitter escalation).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Raised for unreadable/unwritable files and malformed on-disk data.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace nngp
