#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace capforge {

/// A caller broke a documented precondition (bad shape, re-used tape, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or Inf showed up. `op()` names the operation that produced it.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string op, const std::string& what)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Malformed input data; `line()` is 1-based, 0 when not line-oriented.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace capforge
