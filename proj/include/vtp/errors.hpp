#pragma once

#include <stdexcept>
#include <string>

namespace vtp {

// Invalid configuration (CLI maps these to exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between tensor operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated call contract (wrong mode, wrong sequencing, bad operand domain).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed persisted data.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training aborted (non-finite loss and similar).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vtp
