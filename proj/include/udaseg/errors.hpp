#pragma once

#include <stdexcept>
#include <string>

namespace udaseg {

// Bad data passed to an operation (shape mismatch, out-of-range values).
struct InvalidInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad configuration value or unparseable config file.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input that makes an operation mathematically meaningless (zero variance).
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Metric has no defined value for this mask pair (e.g. empty mask for H95).
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient; the run aborts with a diagnostic.
struct TrainingDivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (e.g. backward without a recorded forward).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace udaseg
