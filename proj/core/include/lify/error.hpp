#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lify {

/// Stable error codes shared by every module. The string form is what the
/// HTTP API puts in {"error":{"code":...}}.
enum class ErrorCode {
  SensorFault,
  NoPulseDetected,
  WindowTooShort,
  NoSignal,
  InvalidTarget,
  NotConnected,
  PayloadTooLarge,
  ConfigError,
  TlsError,
  ProtocolError,
  MetricMismatch,
  Forbidden,
  Unauthorized,
  ValidationError,
  NotFound,
  AlreadyAcked,
  Conflict,
  EmailTaken,
  WeakPassword,
  BadCredentials,
  RateLimited,
  BadCode,
  Expired,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// HTTP status the API maps an error code onto.
int http_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lify
