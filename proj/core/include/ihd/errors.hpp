#pragma once

#include <stdexcept>
#include <string>

namespace ihd {

// Shape/dimension mismatches between arrays.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Inputs that violate an operation's value-level contract.
struct ValidationError : std::invalid_argument {
    explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Inconsistent or unsupported configuration.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed or incomplete data files / tables.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid ensemble nesting structure.
struct StructureError : std::invalid_argument {
    explicit StructureError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Failures raised mid-optimization (e.g. non-finite loss).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ihd
