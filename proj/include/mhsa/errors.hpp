#pragma once

#include <stdexcept>
#include <string>

namespace mhsa {

// Every library failure derives from Error so callers can map categories onto
// process exit codes (see tools/mhsa_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Container load failures. Each has its own type so callers (and tests) can
// tell a corrupt file from a truncated one.
class ContainerError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

class VersionError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

class TruncatedError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

class CrcError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

}  // namespace mhsa
