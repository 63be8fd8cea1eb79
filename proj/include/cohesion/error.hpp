#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cohesion {

enum class ErrorCode {
  HeaderMismatch,
  MalformedRecord,
  EmptyFile,
  InvariantViolation,
  DimMismatch,
  EmptyInput,
  LevelOutOfRange,
  DuplicateId,
  NonFiniteInput,
  EmptyTrainingSet,
  DidNotConverge,
  InfeasiblePoint,
  NoFeaturesForModality,
  ModalityMismatch,
  BadStep,
  EmptyValidationSet,
  EmptyTruth,
  MissingPrediction,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LevelOutOfRange: return "LevelOutOfRange";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::DidNotConverge: return "DidNotConverge";
    case ErrorCode::InfeasiblePoint: return "InfeasiblePoint";
    case ErrorCode::NoFeaturesForModality: return "NoFeaturesForModality";
    case ErrorCode::ModalityMismatch: return "ModalityMismatch";
    case ErrorCode::BadStep: return "BadStep";
    case ErrorCode::EmptyValidationSet: return "EmptyValidationSet";
    case ErrorCode::EmptyTruth: return "EmptyTruth";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cohesion
