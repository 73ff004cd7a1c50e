#pragma once

#include <stdexcept>
#include <string>

namespace certsim {

// Base class for all recoverable toolkit errors. The CLI maps these to
// exit code 2 (data/format); anything else escaping to main is treated as
// an internal failure (exit code 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

// Malformed file contents (bad magic, version, inconsistent header).
struct FormatError : Error {
    using Error::Error;
};

// OS-level read/write failures and truncated streams.
struct IoError : Error {
    using Error::Error;
};

// Dataset/store inconsistencies (missing ids, bad labels).
struct DataError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values, degenerate embeddings, diverged optimizations.
struct NumericError : Error {
    using Error::Error;
};

} // namespace certsim
