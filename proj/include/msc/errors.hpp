#pragma once

#include <stdexcept>
#include <string>

namespace msc {

// All library failures derive from Error so the CLI can report them uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised when a normal-equations system cannot be factored.
class RankDeficiencyError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace msc
