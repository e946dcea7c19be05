#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace opushield {

/// Caller passed something that violates an operation's precondition
/// (shape mismatch, label out of range, unknown parameter name, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An exact gradient was requested through a layer whose parameters are
/// obfuscated or whose forward map is not differentiable.
class BlockedPathError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Operation called on a model that does not have the required structure.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An experiment could not produce a result (empty sample set, failed
/// training run, ...). Distinct from bad input.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data. `offset()` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace opushield
