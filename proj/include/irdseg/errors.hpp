#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace irdseg {

// Thrown for malformed files and filesystem failures. The CLI maps this
// to exit code 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for bad config files and unknown keys. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for solver non-convergence, non-finite losses and similar
// numerical failures. CLI exit code 4.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A hole in the depth map whose connected component never touches a pixel
// with observed depth. Carries the offending pixels as (row, col) pairs.
class UnsolvableComponentError : public NumericalError {
public:
    UnsolvableComponentError(const std::string& msg,
                             std::vector<std::pair<std::size_t, std::size_t>> pixels)
        : NumericalError(msg), component_pixels(std::move(pixels)) {}

    std::vector<std::pair<std::size_t, std::size_t>> component_pixels;
};

}  // namespace irdseg
