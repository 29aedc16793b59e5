#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coupleface {

enum class ErrorCode {
  kZeroVector,
  kInsufficientCandidates,
  kInvalidSpec,
  kShapeMismatch,
  kStaleCache,
  kLabelOutOfRange,
  kEmptyIdentity,
  kInsufficientIdentities,
  kUninitializedBank,
  kIoError,
  kBadMagic,
  kVersionMismatch,
  kTruncatedFile,
  kInvalidParams,
  kDimMismatch,
  kInsufficientPairs,
  kEmptyScores,
  kMissingGalleryEntry,
  kIndexOutOfRange,
  kMissingMetrics,
  kConfigError,
  kNumericalFailure,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace coupleface
