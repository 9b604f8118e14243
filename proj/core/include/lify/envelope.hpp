#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "lify/vitals.hpp"

namespace lify {

inline constexpr int kEnvelopeVersion = 1;
inline constexpr std::size_t kMaxPayloadBytes = 4096;
inline constexpr std::string_view kTelemetryTopicPrefix = "lify/v1/telemetry/";

/// One acquisition cycle as published by a device. A metric may be absent
/// from `metrics` when its estimator failed; its `quality` entry is then
/// "no_signal".
struct TelemetryEnvelope {
  int v = kEnvelopeVersion;
  std::string device_id;
  std::string patient_id;
  std::int64_t ts_ms = 0;
  std::map<MetricKind, double> metrics;
  std::map<MetricKind, Quality> quality;

  bool operator==(const TelemetryEnvelope&) const = default;
};

std::string telemetry_topic(std::string_view device_id);

/// Ids travel in topics and become directory names on the gateway, so they
/// are limited to [A-Za-z0-9._-], 1..64 chars, and may not start with '.'.
bool is_valid_id(std::string_view id) noexcept;

/// Compact UTF-8 JSON with keys in declaration order.
std::string serialize(const TelemetryEnvelope& env);

/// Strict parse. Throws Error(ProtocolError) on malformed JSON and
/// Error(ValidationError) on schema violations; the message of the latter
/// starts with "unknown_metric" when an unrecognised metric code was seen.
TelemetryEnvelope parse_envelope(std::string_view payload);

/// Flattens the envelope into one sample per metric value present.
std::vector<VitalSample> samples_of(const TelemetryEnvelope& env);

}  // namespace lify
