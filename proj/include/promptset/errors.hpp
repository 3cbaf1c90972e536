#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace promptset {

enum class ErrorKind {
  usage,
  invalid_config,
  ingest,
  format,
  coord_space,
  dimension,
  malformed_rle,
  empty_prompt,
  backend,
  protocol,
  fixture_not_found,
  casting,
  export_failure,
  io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, bool retryable = false)
      : std::runtime_error(message), kind_(kind), retryable_(retryable) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Only transport-level backend failures are retryable.
  bool retryable() const noexcept { return retryable_; }

 private:
  ErrorKind kind_;
  bool retryable_;
};

}  // namespace promptset
