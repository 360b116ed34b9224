#pragma once

#include <stdexcept>
#include <string>

namespace mvcl {

/// Base class for every error this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes do not match what an operation requires.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// A parameter is outside its documented range (probabilities, sizes, ...).
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

/// An input value is outside the mathematical domain of an operation.
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

/// A computation produced a non-finite value where a finite one is required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Malformed input data (corpus records, vocab files, rasters, ...).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Filesystem trouble: missing paths, short reads, failed writes.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Config fields that fail validation; message carries the field path.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace mvcl
