#pragma once

// Threshold rules with debounce and re-arm, manual alerts, and the alert
// lifecycle (open -> acked). Alerts live in an append-only log,
// {data_root}/alerts.ndjson, whose current state is the fold of its records;
// explicit rules are kept in {data_root}/rules.json.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lify/actor.hpp"
#include "lify/alert_model.hpp"
#include "lify/clock.hpp"
#include "lify/event_bus.hpp"

namespace lify {

struct RuleState {
  int consecutive_breaches = 0;
  int consecutive_normals = 0;
  bool armed = true;
  bool operator==(const RuleState&) const = default;
};

struct Evaluation {
  RuleState state;
  bool fire = false;
};

/// One step of the debounce/re-arm machine. In range means
/// min <= value <= max. NoSignal samples leave the state untouched; Suspect
/// samples count. Fires when armed and the breach run reaches debounce_n,
/// then disarms until the normal run reaches rearm_m.
/// Throws Error(MetricMismatch) when the sample's metric is not the rule's.
Evaluation evaluate(const VitalSample& sample, const AlertRule& rule, const RuleState& state);

inline constexpr std::size_t kMaxManualMessageChars = 500;

struct AlertFilter {
  std::optional<AlertState> state;
  std::optional<std::string> patient_id;
  std::optional<std::int64_t> since_ms;  // created_ts_ms >= since_ms
};

class AlertEngine {
 public:
  /// Subscribes to sample events on `bus` and publishes alert events to it.
  /// An empty data_root keeps everything in memory.
  AlertEngine(EventBus& bus, std::filesystem::path data_root = {}, Clock& clock = SystemClock::instance());
  ~AlertEngine();
  AlertEngine(const AlertEngine&) = delete;
  AlertEngine& operator=(const AlertEngine&) = delete;

  /// Evaluates one accepted sample; returns the alert if one fired.
  std::optional<Alert> on_sample(const VitalSample& sample);

  /// Throws Forbidden for family users, ValidationError for an empty or
  /// over-long message or an Info severity.
  Alert trigger_manual(const Actor& user, const std::string& patient_id, const std::string& message,
                       Severity severity);
  /// Throws Forbidden, NotFound or AlreadyAcked.
  Alert acknowledge(const Actor& user, const std::string& alert_id);

  /// Newest first: created_ts_ms desc, then alert_id desc.
  std::vector<Alert> list(const AlertFilter& filter = {}) const;
  std::optional<Alert> get(const std::string& alert_id) const;

  /// Replaces the patient's rule for that metric and resets its state.
  /// Takes effect from the next sample. Throws ValidationError.
  AlertRule set_rule(AlertRule rule);
  /// Effective rule per metric: explicit or default.
  std::vector<AlertRule> rules(const std::string& patient_id) const;
  AlertRule rule(const std::string& patient_id, MetricKind metric) const;
  RuleState state(const std::string& patient_id, MetricKind metric) const;

 private:
  using Key = std::pair<std::string, MetricKind>;

  std::string next_id();
  void append_log(const nlohmann::ordered_json& record);
  void load();
  void save_rules();

  EventBus& bus_;
  std::filesystem::path root_;
  Clock& clock_;

  mutable std::mutex mu_;
  std::map<Key, AlertRule> rules_;
  std::map<Key, RuleState> states_;
  std::map<std::string, Alert> alerts_;
  std::uint64_t last_id_ = 0;
  std::ofstream log_;
  EventBus::Subscription sub_;
};

}  // namespace lify
