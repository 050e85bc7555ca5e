#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctxgcd {

enum class ErrorCode {
  ZeroVector,
  NonPositiveTemperature,
  NotAProbabilityVector,
  NonFiniteEvaluation,
  InfeasibleSeparation,
  ParseError,
  InvariantViolation,
  ShapeMismatch,
  CacheMismatch,
  KTooLarge,
  DegenerateSum,
  NoLabeledSamples,
  BatchTooSmall,
  NoCommonClasses,
  DatasetTooSmall,
  DivergenceDetected,
  EmptyInput,
  LengthMismatch,
  IoError,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::NotAProbabilityVector: return "NotAProbabilityVector";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::InfeasibleSeparation: return "InfeasibleSeparation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateSum: return "DegenerateSum";
    case ErrorCode::NoLabeledSamples: return "NoLabeledSamples";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NoCommonClasses: return "NoCommonClasses";
    case ErrorCode::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can report a structured error.
class GcdError : public std::runtime_error {
 public:
  GcdError(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw GcdError(code, message);
}

}  // namespace ctxgcd
