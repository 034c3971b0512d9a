#include "quiver/error.hpp"

namespace quiver {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::UnsupportedTypeCode: return "UnsupportedTypeCode";
    case ErrorCode::InsufficientClassMembers: return "InsufficientClassMembers";
    case ErrorCode::SampleTooLarge: return "SampleTooLarge";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TraceMismatch: return "TraceMismatch";
    case ErrorCode::BadLayerRange: return "BadLayerRange";
    case ErrorCode::NonPositiveScaleForReLU: return "NonPositiveScaleForReLU";
    case ErrorCode::RegionMismatch: return "RegionMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::EmptyCalibrationSet: return "EmptyCalibrationSet";
    case ErrorCode::UndefinedRegion: return "UndefinedRegion";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace quiver
