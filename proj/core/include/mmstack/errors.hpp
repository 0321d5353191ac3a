#pragma once

#include <stdexcept>
#include <string>

namespace mmstack {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes (validation 2, io 3, divergence 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad magic bytes or unsupported version in a binary file.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Declared shape disagrees with the bytes actually present.
class CorruptionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Row counts of two dataset components disagree.
class AlignmentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A metric is undefined for the given input (e.g. GAP with zero positives).
class UndefinedMetricError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace mmstack
