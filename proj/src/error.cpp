#include "neurodec/error.hpp"

namespace neurodec {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::DuplicateTrial: return "DuplicateTrial";
    case ErrorCode::UnknownTrial: return "UnknownTrial";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TrainTestOverlap: return "TrainTestOverlap";
    case ErrorCode::InvalidEvents: return "InvalidEvents";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::EventOutOfRange: return "EventOutOfRange";
    case ErrorCode::EmptyDesign: return "EmptyDesign";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::MissingRun: return "MissingRun";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::UnknownRoi: return "UnknownRoi";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::UnknownVoxel: return "UnknownVoxel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MismatchedProvenance: return "MismatchedProvenance";
    case ErrorCode::AlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace neurodec
