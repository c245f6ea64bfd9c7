#pragma once

#include <stdexcept>
#include <string>

namespace scaled {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or frame shapes disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// File system or stream failure, including truncated or malformed media.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Encoder/decoder failure: missing executable, nonzero exit, bad stream.
class CodecError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is unreadable or structurally broken.
class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

/// Checkpoint was written by a newer format version.
class VersionMismatch : public Error {
 public:
  using Error::Error;
};

/// Run configuration is invalid (unknown key, bad value, missing path).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN/inf loss).
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace scaled
