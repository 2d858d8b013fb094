#pragma once
#include <stdexcept>
#include <string>

namespace maskrec {

// Bad input data: unreadable/corrupt files, schema or shape mismatches.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between tensors, specs or datasets.
struct DimensionError : DataError {
    explicit DimensionError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace maskrec
