#pragma once

#include <stdexcept>
#include <string>

namespace mixgrad {

// Shape/axis disagreement between tensors or parameters.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside its legal domain (alpha <= 0, lambda outside [0,1], ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data (dataset files, checkpoints, configs).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mixgrad
