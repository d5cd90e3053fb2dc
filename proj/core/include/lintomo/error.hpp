#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lintomo {

enum class ErrorKind {
  kInvalidBounds,
  kInvalidCount,
  kInvalidChord,
  kEmptyChordSet,
  kShapeMismatch,
  kDegenerateSample,
  kInvalidRatios,
  kInvalidRule,
  kInvalidConfig,
  kIoError,
  kFormatError,
  kSpatialUnderflow,
  kInvalidSpec,
  kMissingPI,
  kUnexpectedPI,
  kSpecMismatch,
  kNonFiniteLoss,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so that callers (the CLI
// in particular) can map it onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lintomo
