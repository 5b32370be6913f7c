#pragma once

#include <stdexcept>
#include <string>

namespace eeserve {

/// Malformed or inconsistent input data (files, configs, traces).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// A requested plan does not fit the hardware description.
class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

/// Arguments outside an operation's domain (negative byte counts, unknown ids).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Policy asked to decide without the profiling data it needs.
class StalenessError : public std::runtime_error {
public:
    explicit StalenessError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace eeserve
