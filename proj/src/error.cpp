#include "quakesense/error.hpp"

namespace quakesense {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Dependency: return "dependency error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Conflict: return "conflict error";
    case ErrorKind::Sampling: return "sampling error";
    case ErrorKind::Coverage: return "coverage error";
    case ErrorKind::MissingData: return "missing-data error";
    case ErrorKind::Join: return "join error";
    case ErrorKind::Render: return "render error";
    case ErrorKind::Value: return "value error";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Mock: return "mock error";
    case ErrorKind::Aggregation: return "aggregation error";
    case ErrorKind::Mapping: return "mapping error";
    case ErrorKind::Metric: return "metric error";
    case ErrorKind::UndefinedCorrelation: return "undefined-correlation error";
    case ErrorKind::Analysis: return "analysis error";
    case ErrorKind::Export: return "export error";
    case ErrorKind::Conservation: return "conservation error";
  }
  return "error";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Dependency:
      return 1;
    case ErrorKind::Transport:
      return 3;
    default:
      return 2;
  }
}

}  // namespace quakesense
