#pragma once

#include <stdexcept>
#include <string>

namespace clipdebias {

// Base of every error raised by the toolkit. Messages are prefixed with the
// module that raised them ("data_model: ...").
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file: bad magic, truncated payload, unparsable field.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose content violates a data invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Mathematical precondition violated (shape mismatch, zero norm, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace clipdebias
