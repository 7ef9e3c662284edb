#pragma once

#include <stdexcept>
#include <string>

namespace gbs {

// Invalid dimensions, parameters or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input data (schemas, datasets, covariates).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Exhaustive enumeration over 2^K profiles was requested for a K that is too large.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An optimizer produced a non-finite parameter or loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or wrong session bearer token.
class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gbs
