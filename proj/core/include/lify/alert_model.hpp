#pragma once

// Alert rules and alert records shared by the engine, the notifier, the API
// and the event bus.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "lify/vitals.hpp"

namespace lify {

enum class Severity { Info = 0, Warning = 1, Critical = 2 };

std::string_view severity_code(Severity s) noexcept;  // "info" | "warning" | "critical"
std::optional<Severity> parse_severity(std::string_view code) noexcept;

struct AlertRule {
  std::string rule_id;
  std::string patient_id;
  MetricKind metric = MetricKind::TempC;
  double min = 0.0;
  double max = 0.0;
  int debounce_n = 3;
  int rearm_m = 5;
  Severity severity = Severity::Warning;
  bool enabled = true;

  /// Throws Error(ValidationError) unless min < max and both counts are >= 1.
  void validate() const;
  bool operator==(const AlertRule&) const = default;
};

/// Defaults used for a patient with no explicit rule for a metric.
AlertRule default_rule(const std::string& patient_id, MetricKind metric);

enum class AlertState { Open, Acked };

std::string_view alert_state_code(AlertState s) noexcept;  // "open" | "acked"
std::optional<AlertState> parse_alert_state(std::string_view code) noexcept;

struct Alert {
  std::string alert_id;
  std::string patient_id;
  // automatic alerts only
  std::optional<MetricKind> metric;
  std::optional<double> value;
  std::optional<double> rule_min;
  std::optional<double> rule_max;
  std::optional<std::int64_t> sample_ts_ms;
  // manual alerts only
  std::optional<std::string> raised_by;  // user id
  std::string raised_by_name;

  std::string message;
  Severity severity = Severity::Warning;
  AlertState state = AlertState::Open;
  std::optional<std::string> acked_by;
  std::optional<std::int64_t> acked_ts_ms;
  std::int64_t created_ts_ms = 0;

  bool is_manual() const noexcept { return raised_by.has_value(); }
  bool operator==(const Alert&) const = default;
};

nlohmann::ordered_json rule_to_json(const AlertRule& r);
/// Reads the editable fields; patient and metric come from the caller.
AlertRule rule_from_json(const nlohmann::json& j, const std::string& patient_id, MetricKind metric);

nlohmann::ordered_json alert_to_json(const Alert& a);
Alert alert_from_json(const nlohmann::json& j);

}  // namespace lify
