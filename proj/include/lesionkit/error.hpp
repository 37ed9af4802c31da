#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lesionkit {

enum class ErrorCode {
  // data errors
  IoError,
  MalformedHeader,
  LengthMismatch,
  UnsupportedDtype,
  OversizeGrid,
  SeedOutOfBounds,
  EmptyRegion,
  TooFewCases,
  MissingModality,
  ShapeMismatch,
  VersionMismatch,
  ChecksumMismatch,
  NoValidPairs,
  FeatureCountMismatch,
  TooFewSamples,
  SingleClassLabels,
  DegenerateLabels,
  UnknownModelId,
  EmptyGroup,
  InvalidArgument,
  // numeric failures
  DegenerateBatch,
  NonFiniteGradient,
};

enum class ErrorCategory { Data, Numeric };

std::string_view to_string(ErrorCode code);
ErrorCategory category(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace lesionkit
