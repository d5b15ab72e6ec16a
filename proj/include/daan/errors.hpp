#pragma once

#include <stdexcept>
#include <string>

namespace daan {

// Base of every error thrown by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Hyperparameter outside its legal range (negative lambda, dropout >= 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke a precondition (non-scalar loss, non-prefix mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input files.
class DataError : public Error {
 public:
  using Error::Error;
};

class LabelError : public DataError {
 public:
  using DataError::DataError;
};

class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered during a forward pass or training step.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace daan
