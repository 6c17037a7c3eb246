#pragma once

#include <stdexcept>
#include <string>

namespace ocrseg {

// Shapes or widths that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument outside its domain (e.g. non-positive temperature).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward on a non-scalar loss.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Operation requested in the wrong state (e.g. tracking disabled).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or out-of-range input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Profiler graph contains an op the cost model does not know.
class EnumerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ocrseg
