#pragma once

#include <stdexcept>
#include <string>

namespace mmattack {

inline constexpr const char* kEngineName = "mmattack";
inline constexpr const char* kEngineVersion = "0.1.0";

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invariant violation on a domain value (pixel range, option count, ...).
class ValidationError : public Error {
public:
  using Error::Error;
};

// Malformed external input (dataset line, PPM header, endpoint reply).
class ParseError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace mmattack
