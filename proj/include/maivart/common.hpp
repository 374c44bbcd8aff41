#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace maivart {

// Test and verification builds run in double precision. Define
// MAIVART_REAL_FLOAT to trade precision for speed in training builds;
// the documented tolerances assume double.
#ifdef MAIVART_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable or malformed files. CLI exit code 2.
struct IoError : Error {
    using Error::Error;
};

// Well-formed file whose content cannot be processed (too short,
// unsupported codec, ...). CLI exit code 2.
struct InputError : Error {
    using Error::Error;
};

// Bad configuration: invalid flag values, incompatible settings. Exit code 3.
struct ConfigError : Error {
    using Error::Error;
};

// A caller broke an API precondition. Exit code 3.
struct ContractError : Error {
    using Error::Error;
};

// Tensor shape mismatch; messages name both offending shapes.
struct DimensionError : ContractError {
    using ContractError::ContractError;
};

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

}  // namespace maivart
