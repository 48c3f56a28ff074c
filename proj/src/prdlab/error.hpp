#pragma once

#include <stdexcept>
#include <string>

namespace prdlab {

// Raised for contract violations on inputs (bad shapes, empty reports, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for failures that depend on data values or the environment
// (non-finite losses, unreadable files, malformed checkpoints).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prdlab
