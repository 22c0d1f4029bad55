#pragma once

#include <stdexcept>
#include <string>

namespace dart {

// Error taxonomy maps onto CLI exit codes:
//   UsageError -> 1, DataError -> 2, InvariantError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad flags, bad config keys, impossible settings.
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input data (corpus files, prediction files).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Broken internal contract: shape mismatches, non-finite values,
// frozen parameters that moved, retrieval from an undersized source.
struct InvariantError : Error {
    explicit InvariantError(const std::string& msg) : Error(msg) {}
};

struct DimensionError : InvariantError {
    explicit DimensionError(const std::string& msg) : InvariantError(msg) {}
};

}  // namespace dart
