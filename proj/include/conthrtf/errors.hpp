#pragma once

#include <stdexcept>
#include <string>

namespace conthrtf {

/// Invalid configuration or precondition violation. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown (non-positive innovation variance, failed factorization,
/// non-convergent series). CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system or format failure. CLI exit code 3.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

} // namespace conthrtf
