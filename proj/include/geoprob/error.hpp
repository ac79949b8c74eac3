#pragma once

#include <stdexcept>
#include <string>

namespace geoprob {

enum class ErrorCode {
  InvalidParameter,
  EmptyConfiguration,
  DegenerateDensity,
  MissingMark,
  TooFewPoints,
  DuplicatePoint,
  InconsistentInput,
  InsufficientData,
  Extrapolation,
  LinearDependence,
  HorizonExceeded,
  InvariantViolation,
  Io,
  Config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace geoprob
