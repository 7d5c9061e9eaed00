#pragma once

#include <stdexcept>
#include <string>

namespace hat {

/// Failure categories. The CLI maps each category to an exit code.
enum class ErrorKind {
  kDimension,      // shape mismatch between operands
  kConfig,         // invalid configuration value or key
  kUsage,          // API or command misuse
  kData,           // values outside their domain (e.g. label 10)
  kFormat,         // malformed file contents
  kLength,         // truncated file
  kRunFailure,     // training produced non-finite values
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace hat
