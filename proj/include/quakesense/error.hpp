#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace quakesense {

enum class ErrorKind {
  Config,
  Dependency,
  Io,
  Parse,
  Schema,
  Conflict,
  Sampling,
  Coverage,
  MissingData,
  Join,
  Render,
  Value,
  Transport,
  Mock,
  Aggregation,
  Mapping,
  Metric,
  UndefinedCorrelation,
  Analysis,
  Export,
  Conservation,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for a failure of this kind:
// 1 user/config error, 2 data error, 3 transport error.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace quakesense
