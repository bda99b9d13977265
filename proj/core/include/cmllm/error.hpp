#pragma once

#include <stdexcept>
#include <string>

namespace cmllm {

/// Failure categories. The CLI maps each one onto a stable exit code.
enum class ErrorKind {
  Io = 2,
  InvalidInput = 3,
  Numeric = 4,
  Compatibility = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorKind::InvalidInput, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

struct CompatibilityError : Error {
  explicit CompatibilityError(const std::string& what) : Error(ErrorKind::Compatibility, what) {}
};

}  // namespace cmllm
