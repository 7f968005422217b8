#pragma once

#include <stdexcept>
#include <string>

namespace dwformer {

// Shape disagreement between tensor operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Attention mask that is malformed or leaves a row with no visible entry.
struct MaskError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Window partition that is not a sorted, contiguous, exact cover.
struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call contract (wrong scope, non-scalar loss, label range, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range slice or element access.
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration value or unknown configuration key.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file content; message carries the byte offset where parsing failed.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint does not match the model described by its own header.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced non-finite values (loss, parameters, or activations).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace dwformer
