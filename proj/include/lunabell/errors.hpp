#pragma once

#include <stdexcept>
#include <string>

namespace lunabell {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A configuration (file, preset, or assembled scenario) is inconsistent.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace lunabell
