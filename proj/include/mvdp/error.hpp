#pragma once

#include <stdexcept>
#include <string>

namespace mvdp {

enum class ErrorCode {
  InvalidArgument,
  PointBehindCamera,
  NonPositiveDepth,
  JointCountMismatch,
  EmptyPool,
  IoFailure,
  InvalidStage,
  FormatError,
  EmptyForeground,
  ShapeMismatch,
  NonFiniteLoss,
  NoViews,
  NoForegroundPoints,
  SingularSystem,
  DimensionMismatch,
  InsufficientData,
  CountMismatch,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mvdp
