#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spurscan {

enum class ErrorCode {
  // pe_map
  NotPe,
  Truncated,
  // nn
  TokenOutOfRange,
  ShapeMismatch,
  StaleCache,
  NonFinite,
  InvalidConfig,
  BadMagic,
  ManifestMismatch,
  TruncatedPayload,
  // scoring
  AllSkipped,
  // corpus
  BadHeader,
  DuplicatePath,
  BadLabel,
  IoError,
  // synth
  InconsistentSpec,
  Diverged,
  // report
  BadReport,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spurscan
