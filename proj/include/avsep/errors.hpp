#pragma once

#include <stdexcept>
#include <string>

namespace avsep {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A shared axis has mismatched lengths, or a shape does not fit an operation.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// An operation's axis-set precondition is violated (e.g. reduce axis missing).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (e.g. depth not divisible by head count).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite value where a finite one is required.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Tensor allocation would exceed the configured memory budget.
struct MemoryBudgetError : Error {
  explicit MemoryBudgetError(const std::string& msg) : Error(msg) {}
};

// AUC over records whose labels are all positive or all negative.
struct DegenerateLabelsError : Error {
  explicit DegenerateLabelsError(const std::string& msg) : Error(msg) {}
};

// Classification loss requested for an example with no active source.
struct NoActiveSourceError : Error {
  explicit NoActiveSourceError(const std::string& msg) : Error(msg) {}
};

}  // namespace avsep
