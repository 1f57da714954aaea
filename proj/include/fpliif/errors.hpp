#pragma once

#include <stdexcept>
#include <string>

namespace fpliif {

// Shape or extent mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-domain scalar argument (temperature <= 0, n < 1, ...).
class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: backward on a freed graph, missing gradients, ...
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite coordinates and similar malformed inputs.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic or unsupported version in a checkpoint.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint payload disagrees with its own header (truncation, bad shapes).
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset content problems: missing files, invalid label ids.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fpliif
