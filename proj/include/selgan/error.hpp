#pragma once

#include <stdexcept>
#include <string>

namespace selgan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or unwritable file.
class FileError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or version-mismatched serialized data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A loss term became NaN or infinite during training.
class NumericsError : public Error {
 public:
  NumericsError(std::string term, double value)
      : Error("non-finite loss term '" + term + "' (" + std::to_string(value) + ")"),
        term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace selgan
