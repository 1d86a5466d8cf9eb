#pragma once

#include <stdexcept>
#include <string>

namespace esref {

// Thrown for malformed input files (bad JSON, bad binary framing).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when input is syntactically fine but violates the data schema
// (unknown role, duplicate id, invariant violation).
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown for invalid configuration values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a referenced input file is missing or unreadable.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a judge cannot produce a verdict (transport or parse failure
// after retry). Carries enough context to identify the failing candidate.
struct AnnotationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace esref
