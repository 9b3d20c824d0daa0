#pragma once

#include <stdexcept>
#include <string>

namespace kairos {

// Root of every error the engine raises. Callers that only need a message
// can catch this; the CLI maps the concrete subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what a kernel or layer expects.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Container bytes do not follow the on-disk layout (magic, header, ordering).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Container header is well formed but the payload is short or inconsistent.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Weights do not match the architecture they are loaded for.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data cannot support the requested statistic (e.g. a single class present).
class DataError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace kairos
