// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pie {

/// Failure categories raised by the library. The CLI maps these onto exit
/// codes, so new values must be added there as well.
enum class ErrorCode {
  InvalidInput,
  AllColumnsPruned,
  NotIdentified,
  SingularDesign,
  NormalizationSingular,
  SingularProjection,
  DimensionMismatch,
  SingularH,
  SingularContrastCov,
  UnsupportedFactorCount,
  ConfigInvalid,
  SingularGram,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::AllColumnsPruned: return "AllColumnsPruned";
    case ErrorCode::NotIdentified: return "NotIdentified";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::NormalizationSingular: return "NormalizationSingular";
    case ErrorCode::SingularProjection: return "SingularProjection";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingularH: return "SingularH";
    case ErrorCode::SingularContrastCov: return "SingularContrastCov";
    case ErrorCode::UnsupportedFactorCount: return "UnsupportedFactorCount";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::SingularGram: return "SingularGram";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pie
