#include "coupleface/error.hpp"

namespace coupleface {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kInsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kEmptyIdentity: return "EmptyIdentity";
    case ErrorCode::kInsufficientIdentities: return "InsufficientIdentities";
    case ErrorCode::kUninitializedBank: return "UninitializedBank";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kInsufficientPairs: return "InsufficientPairs";
    case ErrorCode::kEmptyScores: return "EmptyScores";
    case ErrorCode::kMissingGalleryEntry: return "MissingGalleryEntry";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kMissingMetrics: return "MissingMetrics";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

}  // namespace coupleface
