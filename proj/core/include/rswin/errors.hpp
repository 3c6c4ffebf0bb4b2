#pragma once

#include <stdexcept>
#include <string>

namespace rswin {

// Root of every error raised by the library. Each subclass maps to one
// failure category so callers (the CLI in particular) can branch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, malformed config files, unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing/undecodable images, empty splits, malformed manifests.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training or any forward computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Bad magic bytes: not a checkpoint at all.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointIntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// The stored tensors disagree with the embedded (or expected) model config.
class CheckpointIncompatibleError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace rswin
