#pragma once

#include <stdexcept>
#include <string>

namespace anyreid {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: configuration values, scenario strings, unknown ids.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/inf in a loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace anyreid
