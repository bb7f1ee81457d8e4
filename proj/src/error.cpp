#include "prepline/error.hpp"

namespace prepline {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kEmptyMesh: return "empty_mesh";
    case ErrorKind::kTopology: return "topology";
    case ErrorKind::kRegistration: return "registration";
    case ErrorKind::kNormalization: return "normalization";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kNoBoundary: return "no_boundary";
    case ErrorKind::kIncompleteMargin: return "incomplete_margin";
    case ErrorKind::kEmptyRegion: return "empty_region";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kSpline: return "spline";
    case ErrorKind::kCorrelation: return "correlation";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kShape:
      return 1;
    case ErrorKind::kInternal:
      return 3;
    default:
      return 2;
  }
}

}  // namespace prepline
