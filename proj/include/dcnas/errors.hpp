#pragma once

#include <stdexcept>

namespace dcnas {

// Error taxonomy mirrors the CLI exit codes: config=2, data=3, numeric=4.
// ShapeError and ContractError are programming/contract violations.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace dcnas
