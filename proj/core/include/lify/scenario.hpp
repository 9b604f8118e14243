#pragma once

// Scripted end-to-end runs: an in-process stack, simulated devices started
// on a timeline, broker outages, and alert expectations checked at the end.
//
// Script format (times are offsets from the scenario start, durations as in
// config files: seconds or "500ms"/"10s"/"2m"):
//   {"name": "fever",
//    "patients": [{"patient_id": "p-001", "name": "Ana Pereira", "birth_date": "1941-03-02",
//                  "device_ids": ["dev-01"]}],
//    "rules": [{"patient_id": "p-001", "metric": "temp_c", "min": 35, "max": 38,
//               "debounce_n": 3, "rearm_m": 5, "severity": "warning"}],
//    "watchers": [{"email": "nurse@example.org", "role": "staff", "name": "Nurse J.",
//                  "patients": ["p-001"], "chat_id": "chat-1"}],
//    "actions": [
//      {"at": "0s",  "do": "start_agent", "device_id": "dev-01", "patient_id": "p-001",
//       "period": "1s", "seed": 7, "anomalies": ["temp_c=39.5@10s+30s"]},
//      {"at": "20s", "do": "broker_down"},
//      {"at": "30s", "do": "broker_up"},
//      {"at": "12s", "do": "expect_alert", "patient_id": "p-001", "metric": "temp_c",
//       "within": "3s", "notify": "chat-1"},
//      {"at": "45s", "do": "stop_agent", "device_id": "dev-01"},
//      {"at": "45s", "do": "end"}]}
//
// start_agent accepts every "agent" config key except the broker settings.
// expect_alert passes when an alert for the patient (and metric, when given)
// was created within [at, at + within]; with "notify" that alert must also
// have been delivered to the chat.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/agent.hpp"
#include "lify/alert_model.hpp"
#include "lify/envelope.hpp"
#include "lify/patients.hpp"

namespace lify {

struct ScenarioWatcher {
  std::string email;
  std::string role = "staff";
  std::string name;
  std::vector<std::string> patients;
  std::string chat_id;
};

struct ScenarioAction {
  std::int64_t at_ms = 0;
  std::string kind;  // start_agent | stop_agent | broker_down | broker_up | expect_alert | end
  nlohmann::json args = nlohmann::json::object();
};

struct ScenarioScript {
  std::string name = "scenario";
  std::vector<PatientProfile> patients;
  std::vector<AlertRule> rules;
  std::vector<ScenarioWatcher> watchers;
  std::vector<ScenarioAction> actions;

  /// Throws Error(ConfigError) for unknown actions, out-of-order times or
  /// references to undefined patients.
  static ScenarioScript from_json(const nlohmann::json& j);
  static ScenarioScript load(const std::filesystem::path& path);
};

struct ExpectationResult {
  std::string description;
  bool passed = false;
  std::string detail;
};

struct ScenarioReport {
  std::string name;
  std::int64_t origin_ms = 0;
  std::vector<ExpectationResult> expectations;
  std::map<std::string, AgentStats> agents;
  /// Every envelope each agent generated, in order.
  std::map<std::string, std::vector<TelemetryEnvelope>> generated;
  std::vector<Alert> alerts;
  bool passed() const;
  nlohmann::json to_json() const;
};

struct ScenarioOptions {
  std::filesystem::path data_root;  // empty = a fresh temporary directory
  bool keep_data = false;
  /// Receives one line per timeline step.
  std::function<void(const std::string&)> log;
};

/// Runs the script in real time against a fresh in-process stack with the
/// embedded TLS broker and the mock chat transport.
ScenarioReport run_scenario(const ScenarioScript& script, const ScenarioOptions& options = {});

}  // namespace lify
