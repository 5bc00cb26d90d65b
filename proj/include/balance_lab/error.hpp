#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace balance_lab {

enum class ErrorCode {
  MalformedLine,
  MissingField,
  EmptyLog,
  BadPolicyParam,
  UnknownState,
  MissingPotential,
  EmptyKernel,
  NoConvergence,
  NotTreeReducible,
  TooFewStates,
  NegativeSigma,
  BadConfig,
  DivideByZero,
  NonAlphabetic,
  InvalidSeedWord,
  RemoteUnreachable,
  BadParams,
  Io,
};

/// Stable upper-case identifier used in machine-readable diagnostics.
std::string_view to_string(ErrorCode code);

/// Domain error raised by every balance_lab module.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace balance_lab
