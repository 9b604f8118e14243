#include "lify/alert_model.hpp"

#include <cmath>

#include "lify/error.hpp"

namespace lify {

std::string_view severity_code(Severity s) noexcept {
  switch (s) {
    case Severity::Info: return "info";
    case Severity::Warning: return "warning";
    case Severity::Critical: return "critical";
  }
  return "warning";
}

std::optional<Severity> parse_severity(std::string_view code) noexcept {
  if (code == "info") return Severity::Info;
  if (code == "warning") return Severity::Warning;
  if (code == "critical") return Severity::Critical;
  return std::nullopt;
}

std::string_view alert_state_code(AlertState s) noexcept { return s == AlertState::Open ? "open" : "acked"; }

std::optional<AlertState> parse_alert_state(std::string_view code) noexcept {
  if (code == "open") return AlertState::Open;
  if (code == "acked") return AlertState::Acked;
  return std::nullopt;
}

void AlertRule::validate() const {
  if (!std::isfinite(min) || !std::isfinite(max)) throw Error(ErrorCode::ValidationError, "min and max must be finite");
  if (!(min < max)) throw Error(ErrorCode::ValidationError, "min must be less than max");
  if (debounce_n < 1) throw Error(ErrorCode::ValidationError, "debounce_n must be at least 1");
  if (rearm_m < 1) throw Error(ErrorCode::ValidationError, "rearm_m must be at least 1");
}

AlertRule default_rule(const std::string& patient_id, MetricKind metric) {
  AlertRule r;
  r.patient_id = patient_id;
  r.metric = metric;
  r.rule_id = "r-" + patient_id + "-" + std::string(metric_code(metric));
  switch (metric) {
    case MetricKind::TempC: r.min = 35.0; r.max = 38.0; break;
    case MetricKind::HrBpm: r.min = 50.0; r.max = 110.0; break;
    case MetricKind::Spo2Pct: r.min = 92.0; r.max = 100.0; break;
  }
  return r;
}

nlohmann::ordered_json rule_to_json(const AlertRule& r) {
  nlohmann::ordered_json j;
  j["rule_id"] = r.rule_id;
  j["patient_id"] = r.patient_id;
  j["metric"] = metric_code(r.metric);
  j["min"] = r.min;
  j["max"] = r.max;
  j["debounce_n"] = r.debounce_n;
  j["rearm_m"] = r.rearm_m;
  j["severity"] = severity_code(r.severity);
  j["enabled"] = r.enabled;
  return j;
}

AlertRule rule_from_json(const nlohmann::json& j, const std::string& patient_id, MetricKind metric) {
  if (!j.is_object()) throw Error(ErrorCode::ValidationError, "rule must be an object");
  AlertRule r = default_rule(patient_id, metric);
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "min") r.min = v.get<double>();
      else if (key == "max") r.max = v.get<double>();
      else if (key == "debounce_n") r.debounce_n = v.get<int>();
      else if (key == "rearm_m") r.rearm_m = v.get<int>();
      else if (key == "enabled") r.enabled = v.get<bool>();
      else if (key == "severity") {
        const auto s = parse_severity(v.get<std::string>());
        if (!s) throw Error(ErrorCode::ValidationError, "unknown severity " + v.dump());
        r.severity = *s;
      } else if (key == "metric") {
        if (v.get<std::string>() != metric_code(metric)) throw Error(ErrorCode::ValidationError, "metric mismatch");
      } else if (key == "patient_id") {
        if (v.get<std::string>() != patient_id) throw Error(ErrorCode::ValidationError, "patient_id mismatch");
      } else if (key == "rule_id") {
        r.rule_id = v.get<std::string>();
      } else {
        throw Error(ErrorCode::ValidationError, "unknown rule field '" + key + "'");
      }
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ValidationError, "invalid value for rule field '" + key + "'");
    }
  }
  if (!j.contains("min") || !j.contains("max")) throw Error(ErrorCode::ValidationError, "rule needs min and max");
  r.validate();
  return r;
}

nlohmann::ordered_json alert_to_json(const Alert& a) {
  nlohmann::ordered_json j;
  j["alert_id"] = a.alert_id;
  j["patient_id"] = a.patient_id;
  j["source"] = a.is_manual() ? "manual" : "auto";
  if (a.metric) j["metric"] = metric_code(*a.metric);
  if (a.value) j["value"] = *a.value;
  if (a.rule_min) j["rule_min"] = *a.rule_min;
  if (a.rule_max) j["rule_max"] = *a.rule_max;
  if (a.sample_ts_ms) j["sample_ts_ms"] = *a.sample_ts_ms;
  if (a.raised_by) {
    j["raised_by"] = *a.raised_by;
    j["raised_by_name"] = a.raised_by_name;
  }
  j["message"] = a.message;
  j["severity"] = severity_code(a.severity);
  j["state"] = alert_state_code(a.state);
  if (a.acked_by) j["acked_by"] = *a.acked_by;
  if (a.acked_ts_ms) j["acked_ts_ms"] = *a.acked_ts_ms;
  j["created_ts_ms"] = a.created_ts_ms;
  return j;
}

Alert alert_from_json(const nlohmann::json& j) {
  Alert a;
  try {
    a.alert_id = j.at("alert_id").get<std::string>();
    a.patient_id = j.at("patient_id").get<std::string>();
    if (j.contains("metric")) {
      a.metric = parse_metric(j.at("metric").get<std::string>());
      if (!a.metric) throw Error(ErrorCode::ValidationError, "unknown metric in alert");
    }
    if (j.contains("value")) a.value = j.at("value").get<double>();
    if (j.contains("rule_min")) a.rule_min = j.at("rule_min").get<double>();
    if (j.contains("rule_max")) a.rule_max = j.at("rule_max").get<double>();
    if (j.contains("sample_ts_ms")) a.sample_ts_ms = j.at("sample_ts_ms").get<std::int64_t>();
    if (j.contains("raised_by")) {
      a.raised_by = j.at("raised_by").get<std::string>();
      a.raised_by_name = j.value("raised_by_name", "");
    }
    a.message = j.at("message").get<std::string>();
    const auto sev = parse_severity(j.at("severity").get<std::string>());
    const auto state = parse_alert_state(j.at("state").get<std::string>());
    if (!sev || !state) throw Error(ErrorCode::ValidationError, "bad alert severity or state");
    a.severity = *sev;
    a.state = *state;
    if (j.contains("acked_by")) a.acked_by = j.at("acked_by").get<std::string>();
    if (j.contains("acked_ts_ms")) a.acked_ts_ms = j.at("acked_ts_ms").get<std::int64_t>();
    a.created_ts_ms = j.at("created_ts_ms").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("malformed alert: ") + e.what());
  }
  return a;
}

}  // namespace lify
