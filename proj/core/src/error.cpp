#include "lify/error.hpp"

namespace lify {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::SensorFault: return "sensor_fault";
    case ErrorCode::NoPulseDetected: return "no_pulse_detected";
    case ErrorCode::WindowTooShort: return "window_too_short";
    case ErrorCode::NoSignal: return "no_signal";
    case ErrorCode::InvalidTarget: return "invalid_target";
    case ErrorCode::NotConnected: return "not_connected";
    case ErrorCode::PayloadTooLarge: return "payload_too_large";
    case ErrorCode::ConfigError: return "config_error";
    case ErrorCode::TlsError: return "tls_error";
    case ErrorCode::ProtocolError: return "protocol_error";
    case ErrorCode::MetricMismatch: return "metric_mismatch";
    case ErrorCode::Forbidden: return "forbidden";
    case ErrorCode::Unauthorized: return "unauthorized";
    case ErrorCode::ValidationError: return "validation_error";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::AlreadyAcked: return "already_acked";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::EmailTaken: return "email_taken";
    case ErrorCode::WeakPassword: return "weak_password";
    case ErrorCode::BadCredentials: return "bad_credentials";
    case ErrorCode::RateLimited: return "rate_limited";
    case ErrorCode::BadCode: return "bad_code";
    case ErrorCode::Expired: return "expired";
    case ErrorCode::IoError: return "io_error";
  }
  return "unknown";
}

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Unauthorized:
    case ErrorCode::BadCredentials:
      return 401;
    case ErrorCode::Forbidden:
      return 403;
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::EmailTaken:
    case ErrorCode::AlreadyAcked:
    case ErrorCode::Conflict:
      return 409;
    case ErrorCode::RateLimited:
      return 429;
    case ErrorCode::IoError:
    case ErrorCode::TlsError:
    case ErrorCode::NotConnected:
      return 500;
    default:
      return 400;
  }
}

}  // namespace lify
