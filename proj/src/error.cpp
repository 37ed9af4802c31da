#include "lesionkit/error.hpp"

namespace lesionkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::OversizeGrid: return "OversizeGrid";
    case ErrorCode::SeedOutOfBounds: return "SeedOutOfBounds";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::TooFewCases: return "TooFewCases";
    case ErrorCode::MissingModality: return "MissingModality";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::NoValidPairs: return "NoValidPairs";
    case ErrorCode::FeatureCountMismatch: return "FeatureCountMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::SingleClassLabels: return "SingleClassLabels";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::UnknownModelId: return "UnknownModelId";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateBatch:
    case ErrorCode::NonFiniteGradient:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace lesionkit
