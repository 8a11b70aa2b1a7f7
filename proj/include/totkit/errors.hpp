#pragma once

#include <stdexcept>
#include <string>

namespace totkit {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: empty feature mask, invalid ratios, out-of-range knobs.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Frame or episode content violates an invariant.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Malformed input data: non-monotone timestamps, unparsable lines, bad labels.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Tensor shape disagreement at a layer boundary.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite value crossed a layer boundary or training diverged.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Checkpoint or dataset file cannot be read back.
struct PersistenceError : Error {
    explicit PersistenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace totkit
