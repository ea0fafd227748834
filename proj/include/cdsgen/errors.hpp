#pragma once

#include <stdexcept>
#include <string>

namespace cdsgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or version-mismatched file, or a missing required column.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// An upstream pipeline artifact is absent.
class MissingDependencyError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

// A corpus measure is undefined on its input (e.g. empty sample).
class UndefinedMeasureError : public Error {
 public:
  using Error::Error;
};

// A fit's design matrix is rank deficient.
class RankError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdsgen
