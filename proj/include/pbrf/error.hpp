#pragma once

#include <stdexcept>
#include <string>

namespace pbrf {

enum class ErrorKind {
  shape,
  empty_data,
  insufficient_data,
  ingestion,
  data,
  lookup,
  unsupported_task,
  configuration,
  divergence,
  singularity,
  indefinite,
  scale_too_small,
  tuning,
  undefined_correlation,
  io,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pbrf
