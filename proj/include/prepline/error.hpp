#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prepline {

enum class ErrorKind {
  kParse,
  kEmptyMesh,
  kTopology,
  kRegistration,
  kNormalization,
  kAlignment,
  kNoBoundary,
  kIncompleteMargin,
  kEmptyRegion,
  kShape,
  kSpline,
  kCorrelation,
  kTraining,
  kValidation,
  kIo,
  kInternal,
};

std::string_view to_string(ErrorKind kind);

/// Exception type used across the library. The kind drives the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// CLI exit codes: 1 validation, 2 data, 3 internal.
int exit_code_for(ErrorKind kind);

}  // namespace prepline
