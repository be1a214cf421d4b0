#pragma once

#include <stdexcept>
#include <string>

namespace atnb {

// Base of every error raised by the library. The C API maps each subclass
// onto one status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Internal invariant broken (e.g. a reuse follower ran before its leader).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace atnb
