#pragma once

#include <stdexcept>
#include <string>

namespace lazyconv {

/// Operand sizes disagree (channels, vector lengths, matrix dims).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A kernel/pool window does not fit the input, or a geometry field is invalid.
struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation precondition that cannot be caught by types.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Base of every on-disk container error.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFileError : FormatError {
  using FormatError::FormatError;
};

/// Declared element counts disagree with geometry or with the blob size.
struct LengthMismatchError : FormatError {
  using FormatError::FormatError;
};

struct UnknownLayerKindError : FormatError {
  using FormatError::FormatError;
};

/// Adjacent layers do not compose, or layer names collide.
struct ShapeError : FormatError {
  using FormatError::FormatError;
};

/// Traces or predictors were produced for a different network.
struct FingerprintError : FormatError {
  using FormatError::FormatError;
};

}  // namespace lazyconv
