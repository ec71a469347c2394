#pragma once

#include <stdexcept>
#include <string>

namespace harakat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text that cannot be interpreted as base characters followed by marks.
class MalformedInputError : public Error {
 public:
  MalformedInputError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A mark combination that has no class in the label taxonomy.
class NormalizationError : public MalformedInputError {
 public:
  using MalformedInputError::MalformedInputError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Manifest, audio or checkpoint I/O failure.
class DataError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace harakat
