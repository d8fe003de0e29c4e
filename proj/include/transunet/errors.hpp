#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace transunet {

// Error hierarchy. The category decides the CLI exit code:
//   ConfigError and subclasses -> 2, DataError and subclasses -> 3,
//   NumericError -> 4. DimensionError/ContractError are programming
//   errors surfaced by the tensor engine and map to 4 as well.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or saved config does not fit the requested model.
class CompatibilityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : DataError(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Header says one thing, payload says another.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace transunet
