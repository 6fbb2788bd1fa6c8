#pragma once

#include <stdexcept>
#include <string>

namespace san {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// usage errors -> 2, input/format errors -> 3, everything else -> 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

// A softmax row with no unmasked entry.
struct DegenerateRowError : Error {
    using Error::Error;
};

// Inconsistent projection presence, bad partition, bad beam width, ...
struct ConfigError : Error {
    using Error::Error;
};

// Cache/session bookkeeping out of step.
struct StateError : Error {
    using Error::Error;
};

// Bad user-supplied data (token id out of range, ragged corpus, ...).
struct InputError : Error {
    using Error::Error;
};

// Weight container / policy file / matrix file violations.
struct FormatError : Error {
    using Error::Error;
};

// Sequence longer than max_len.
struct CapacityError : Error {
    using Error::Error;
};

struct RangeError : Error {
    using Error::Error;
};

// kl(p, q) with q_i == 0 where p_i > 0.
struct SupportError : Error {
    using Error::Error;
};

// Non-finite loss during training.
struct TrainError : Error {
    using Error::Error;
};

// Workload too small for the timer.
struct BenchError : Error {
    using Error::Error;
};

}  // namespace san
