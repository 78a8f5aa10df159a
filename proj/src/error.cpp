#include "mvdp/error.hpp"

namespace mvdp {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PointBehindCamera: return "PointBehindCamera";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::JointCountMismatch: return "JointCountMismatch";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidStage: return "InvalidStage";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NoViews: return "NoViews";
    case ErrorCode::NoForegroundPoints: return "NoForegroundPoints";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::CountMismatch: return "CountMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace mvdp
