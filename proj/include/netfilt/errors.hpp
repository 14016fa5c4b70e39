#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace netfilt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NETFILT_DEFINE_ERROR(Name)      \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

NETFILT_DEFINE_ERROR(DisconnectedGraph);
NETFILT_DEFINE_ERROR(IndexOutOfRange);
NETFILT_DEFINE_ERROR(InvalidArgument);
NETFILT_DEFINE_ERROR(GenerationFailed);
NETFILT_DEFINE_ERROR(InvalidCombinationMatrix);
NETFILT_DEFINE_ERROR(EigenSolverFailure);
NETFILT_DEFINE_ERROR(DimensionMismatch);
NETFILT_DEFINE_ERROR(SingularInnovationCovariance);
NETFILT_DEFINE_ERROR(InconsistentPrior);
NETFILT_DEFINE_ERROR(ShapeMismatch);
NETFILT_DEFINE_ERROR(WindowTooLong);
NETFILT_DEFINE_ERROR(FitFailed);
NETFILT_DEFINE_ERROR(ScenarioInvalid);
NETFILT_DEFINE_ERROR(UnknownParameter);
NETFILT_DEFINE_ERROR(IoFailure);

#undef NETFILT_DEFINE_ERROR

/// Malformed input file; carries the 1-based line number when known (0 otherwise).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line), detail_(what) {}

  std::size_t line() const noexcept { return line_; }
  /// Message without the line prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::size_t line_;
  std::string detail_;
};

}  // namespace netfilt
