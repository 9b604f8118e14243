#include "lify/envelope.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "lify/error.hpp"

namespace lify {

using ojson = nlohmann::ordered_json;

std::string telemetry_topic(std::string_view device_id) {
  std::string t(kTelemetryTopicPrefix);
  t.append(device_id);
  return t;
}

bool is_valid_id(std::string_view id) noexcept {
  if (id.empty() || id.size() > 64 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

std::string serialize(const TelemetryEnvelope& env) {
  ojson j;
  j["v"] = env.v;
  j["device_id"] = env.device_id;
  j["patient_id"] = env.patient_id;
  j["ts_ms"] = env.ts_ms;
  j["metrics"] = ojson::object();
  for (const auto& [m, value] : env.metrics) j["metrics"][std::string(metric_code(m))] = value;
  j["quality"] = ojson::object();
  for (const auto& [m, q] : env.quality) {
    j["quality"][std::string(metric_code(m))] = std::string(quality_code(q));
  }
  return j.dump();
}

namespace {

[[noreturn]] void schema(const std::string& what) {
  throw Error(ErrorCode::ValidationError, "schema: " + what);
}

MetricKind metric_key(const std::string& key) {
  auto m = parse_metric(key);
  if (!m) throw Error(ErrorCode::ValidationError, "unknown_metric: " + key);
  return *m;
}

}  // namespace

TelemetryEnvelope parse_envelope(std::string_view payload) {
  ojson j = ojson::parse(payload.begin(), payload.end(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ProtocolError, "bad_json");
  if (!j.is_object()) schema("envelope is not an object");

  static constexpr std::string_view kKeys[] = {"v", "device_id", "patient_id", "ts_ms", "metrics", "quality"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), std::string_view(key)) == std::end(kKeys)) schema("unexpected key " + key);
  }
  for (auto key : kKeys) {
    if (!j.contains(std::string(key))) schema("missing key " + std::string(key));
  }

  TelemetryEnvelope env;
  if (!j["v"].is_number_integer() || j["v"].get<int>() != kEnvelopeVersion) schema("unsupported version");
  if (!j["device_id"].is_string() || !j["patient_id"].is_string()) schema("ids must be strings");
  env.device_id = j["device_id"].get<std::string>();
  env.patient_id = j["patient_id"].get<std::string>();
  if (!is_valid_id(env.device_id) || !is_valid_id(env.patient_id)) schema("invalid id");
  if (!j["ts_ms"].is_number_integer()) schema("ts_ms must be an integer");
  env.ts_ms = j["ts_ms"].get<std::int64_t>();
  if (env.ts_ms <= 0) schema("ts_ms must be positive");

  if (!j["metrics"].is_object() || !j["quality"].is_object()) schema("metrics and quality must be objects");
  for (const auto& [key, value] : j["metrics"].items()) {
    const auto m = metric_key(key);
    if (!value.is_number() || !std::isfinite(value.get<double>())) schema("metric value must be a finite number");
    env.metrics[m] = value.get<double>();
  }
  for (const auto& [key, value] : j["quality"].items()) {
    const auto m = metric_key(key);
    if (!value.is_string()) schema("quality must be a string");
    auto q = parse_quality(value.get<std::string>());
    if (!q) schema("unknown quality code");
    env.quality[m] = *q;
  }
  for (const auto& [m, _] : env.metrics) {
    if (!env.quality.contains(m)) schema("metric without quality: " + std::string(metric_code(m)));
  }
  return env;
}

std::vector<VitalSample> samples_of(const TelemetryEnvelope& env) {
  std::vector<VitalSample> out;
  out.reserve(env.metrics.size());
  for (const auto& [m, value] : env.metrics) {
    out.push_back(VitalSample{env.patient_id, env.device_id, m, value, env.ts_ms, env.quality.at(m)});
  }
  return out;
}

}  // namespace lify
