#pragma once

#include <stdexcept>
#include <string>

namespace fdflare {

// Exit codes used by the CLI. Library code throws; the CLI maps the
// exception type to the process exit code.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    data = 2,
    numeric = 3,
};

// Bad command line or bad option combination.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: files, schemas, shapes.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors, specs, or stored weights.
struct ShapeError : DataError {
    using DataError::DataError;
};

// A numerical property the library guarantees was violated
// (non-finite op result, failed completeness check, ...).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fdflare
