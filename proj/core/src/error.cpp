#include "spurscan/error.hpp"

namespace spurscan {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NotPe: return "NotPe";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::AllSkipped: return "AllSkipped";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::DuplicatePath: return "DuplicatePath";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InconsistentSpec: return "InconsistentSpec";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::BadReport: return "BadReport";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace spurscan
