#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neurodec {

enum class ErrorCode {
  EmptyDataset,
  MissingPair,
  DuplicateTrial,
  UnknownTrial,
  ShapeMismatch,
  TrainTestOverlap,
  InvalidEvents,
  InvalidParams,
  EventOutOfRange,
  EmptyDesign,
  NumericalFailure,
  DegenerateInput,
  TooFewRows,
  MissingTarget,
  MissingRun,
  ZeroVector,
  UnknownRoi,
  EmptyMask,
  UnknownVoxel,
  InvalidConfig,
  MismatchedProvenance,
  AlignmentMismatch,
  InvalidPlan,
  FormatError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace neurodec
