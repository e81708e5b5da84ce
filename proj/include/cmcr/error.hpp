#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cmcr {

enum class ErrorCode {
  MagicMismatch,
  TruncatedFile,
  NonFiniteValue,
  ZeroRow,
  IoFailure,
  InvalidMatrix,
  DimMismatch,
  ShapeMismatch,
  BatchTooSmall,
  CacheMismatch,
  StepOutOfRange,
  NonFiniteGradient,
  NonFiniteLoss,
  GtOutOfRange,
  LabelOutOfRange,
  EmptyInput,
  EmptyCandidates,
  ConfigInvalid,
  FractionInvalid,
  NotNormalized,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Domain error raised by every cmcr module. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cmcr
