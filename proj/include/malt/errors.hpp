#pragma once

#include <stdexcept>
#include <string>

namespace malt {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the operation.
struct DimensionError : Error {
    using Error::Error;
};

// A caller broke an operation's precondition.
struct ContractError : Error {
    using Error::Error;
};

// A configuration value violates a MaltConfig invariant.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or out-of-range input data (labels, stream files).
struct DataError : Error {
    using Error::Error;
};

// A softmax row with no finite entry.
struct InvalidMaskError : Error {
    using Error::Error;
};

}  // namespace malt
