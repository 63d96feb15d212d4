#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relocnet {

enum class ErrorCode {
  NonRotationMatrix,
  DegenerateRays,
  EmptyInput,
  ZeroVector,
  MalformedPoseFile,
  MissingSplit,
  SingletonScene,
  DimMismatch,
  NTooLarge,
  InsufficientRanking,
  CountMismatch,
  MalformedHeader,
  CoincidentCenters,
  MalformedLine,
  DuplicateKey,
  NoValidHypothesis,
  TooFewNeighbors,
  MissingPrediction,
  UnknownId,
  InvalidConfig,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonRotationMatrix: return "NonRotationMatrix";
    case ErrorCode::DegenerateRays: return "DegenerateRays";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::MalformedPoseFile: return "MalformedPoseFile";
    case ErrorCode::MissingSplit: return "MissingSplit";
    case ErrorCode::SingletonScene: return "SingletonScene";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NTooLarge: return "NTooLarge";
    case ErrorCode::InsufficientRanking: return "InsufficientRanking";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::CoincidentCenters: return "CoincidentCenters";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::NoValidHypothesis: return "NoValidHypothesis";
    case ErrorCode::TooFewNeighbors: return "TooFewNeighbors";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. what() is "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace relocnet
