#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace quiver {

enum class ErrorCode {
  BadMagic,
  TruncatedPayload,
  UnsupportedTypeCode,
  InsufficientClassMembers,
  SampleTooLarge,
  ManifestMismatch,
  ShapeMismatch,
  TraceMismatch,
  BadLayerRange,
  NonPositiveScaleForReLU,
  RegionMismatch,
  DivergedLoss,
  TooFewSamples,
  EmptyCalibrationSet,
  UndefinedRegion,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every quiver operation. The code identifies the
/// failure class so callers (and tests) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace quiver
