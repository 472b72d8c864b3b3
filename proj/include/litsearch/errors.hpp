#pragma once

#include <stdexcept>
#include <string>

namespace litsearch {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

/// Raised when a forward op produces NaN or Inf.
struct NonFiniteError : Error {
  using Error::Error;
};

/// Cholesky of a Gram matrix failed (matrix not positive definite).
struct DegenerateGram : Error {
  using Error::Error;
};

/// A transient stack with zero norm cannot be normalized.
struct ZeroTransient : Error {
  using Error::Error;
};

/// Invalid configuration; `field()` is the JSON path of the offending entry.
struct ConfigError : Error {
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)), message_(message) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

}  // namespace litsearch
