#pragma once

#include <stdexcept>

namespace emodir {

// Contract violations on caller-supplied values.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed files. Messages carry the offending line number where known.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite intermediates where finiteness is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset / bank construction failures.
struct BuildError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Text-backend failures that a caller may retry.
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training aborts: divergence, frozen-parameter drift.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Concept extraction produced nothing even after the union fallback.
struct ExtractionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace emodir
