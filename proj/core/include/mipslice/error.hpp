#pragma once

#include <stdexcept>
#include <string>

namespace mipslice {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Header fields are missing or violate geometric invariants (e.g. spacing).
class MetadataError : public Error {
 public:
  using Error::Error;
};

/// Payload is structurally wrong: unexpected rank, datatype, magic.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Value well-formed but outside the permitted range (e.g. a click below the image).
class RangeError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Tensor or image dimensions incompatible with the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mipslice
