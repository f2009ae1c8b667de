#include "pbrf/error.hpp"

namespace pbrf {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::empty_data: return "empty-data";
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::data: return "data";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::unsupported_task: return "unsupported-task";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::indefinite: return "indefiniteness";
    case ErrorKind::scale_too_small: return "scale-too-small";
    case ErrorKind::tuning: return "tuning";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace pbrf
