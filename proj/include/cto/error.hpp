#pragma once

#include <stdexcept>
#include <string>

namespace cto {

// Base error for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer shape violations and invalid structural arguments.
struct ShapeError : Error {
    using Error::Error;
};

// File, format and dataset problems (CLI exit code 2).
struct DataError : Error {
    using Error::Error;
};

// NaN losses, failed gradient checks and similar (CLI exit code 3).
struct NumericError : Error {
    using Error::Error;
};

// Config file syntax or semantic problems (CLI exit code 1).
struct ConfigError : Error {
    using Error::Error;
};

} // namespace cto
