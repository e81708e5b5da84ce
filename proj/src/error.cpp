#include "cmcr/error.hpp"

namespace cmcr {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::GtOutOfRange: return "GtOutOfRange";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::FractionInvalid: return "FractionInvalid";
    case ErrorCode::NotNormalized: return "NotNormalized";
  }
  return "Unknown";
}

}  // namespace cmcr
