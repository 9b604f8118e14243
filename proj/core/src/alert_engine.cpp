#include "lify/alert_engine.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "lify/error.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;

std::string_view role_code(Role r) noexcept {
  switch (r) {
    case Role::Admin: return "admin";
    case Role::Staff: return "staff";
    case Role::Family: return "family";
  }
  return "family";
}

std::optional<Role> parse_role(std::string_view code) noexcept {
  if (code == "admin") return Role::Admin;
  if (code == "staff") return Role::Staff;
  if (code == "family") return Role::Family;
  return std::nullopt;
}

Evaluation evaluate(const VitalSample& sample, const AlertRule& rule, const RuleState& state) {
  if (sample.metric != rule.metric) {
    throw Error(ErrorCode::MetricMismatch, "sample metric " + std::string(metric_code(sample.metric)) +
                                               " does not match rule metric " + std::string(metric_code(rule.metric)));
  }
  Evaluation out{state, false};
  if (sample.quality == Quality::NoSignal) return out;
  RuleState& s = out.state;
  if (rule.min <= sample.value && sample.value <= rule.max) {
    ++s.consecutive_normals;
    s.consecutive_breaches = 0;
    if (!s.armed && s.consecutive_normals >= rule.rearm_m) s.armed = true;
  } else {
    ++s.consecutive_breaches;
    s.consecutive_normals = 0;
    if (s.armed && s.consecutive_breaches == rule.debounce_n) {
      out.fire = true;
      s.armed = false;
    }
  }
  return out;
}

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

AlertEngine::AlertEngine(EventBus& bus, fs::path data_root, Clock& clock)
    : bus_(bus), root_(std::move(data_root)), clock_(clock) {
  if (!root_.empty()) load();
  sub_ = bus_.subscribe([this](const BusEvent& e) {
    if (const auto* s = std::get_if<SampleEvent>(&e)) on_sample(s->sample);
  });
}

AlertEngine::~AlertEngine() { sub_.reset(); }

std::string AlertEngine::next_id() {
  char buf[24];
  std::snprintf(buf, sizeof buf, "a-%010llu", static_cast<unsigned long long>(++last_id_));
  return buf;
}

void AlertEngine::append_log(const nlohmann::ordered_json& record) {
  if (root_.empty()) return;
  log_ << record.dump() << '\n';
  log_.flush();
  if (!log_) throw Error(ErrorCode::IoError, "cannot append to " + (root_ / "alerts.ndjson").string());
}

void AlertEngine::load() {
  fs::create_directories(root_);
  const auto log_path = root_ / "alerts.ndjson";
  if (fs::exists(log_path)) {
    std::string data = util::read_file(log_path);
    const auto last_nl = data.rfind('\n');
    const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (complete < data.size()) {
      spdlog::warn("alerts: dropping torn tail of {}", log_path.string());
      fs::resize_file(log_path, complete);
      data.resize(complete);
    }
    std::istringstream in(data);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (header) {
          header = false;
          if (j.value("segment", 0) != 1) throw Error(ErrorCode::IoError, "bad alert log header");
          continue;
        }
        const auto op = j.at("op").get<std::string>();
        if (op == "create") {
          auto a = alert_from_json(j.at("alert"));
          unsigned long long n = 0;
          if (std::sscanf(a.alert_id.c_str(), "a-%llu", &n) == 1) last_id_ = std::max<std::uint64_t>(last_id_, n);
          alerts_[a.alert_id] = std::move(a);
        } else if (op == "ack") {
          auto it = alerts_.find(j.at("alert_id").get<std::string>());
          if (it == alerts_.end()) continue;
          it->second.state = AlertState::Acked;
          it->second.acked_by = j.at("acked_by").get<std::string>();
          it->second.acked_ts_ms = j.at("acked_ts_ms").get<std::int64_t>();
        }
      } catch (const std::exception& e) {
        spdlog::warn("alerts: skipping malformed log line: {}", e.what());
      }
    }
  }
  const bool fresh = !fs::exists(log_path) || fs::file_size(log_path) == 0;
  log_.open(log_path, std::ios::binary | std::ios::app);
  if (!log_) throw Error(ErrorCode::IoError, "cannot open " + log_path.string());
  if (fresh) {
    nlohmann::ordered_json h;
    h["segment"] = 1;
    h["log"] = "alerts";
    append_log(h);
  }

  const auto rules_path = root_ / "rules.json";
  if (fs::exists(rules_path)) {
    const auto j = nlohmann::json::parse(util::read_file(rules_path));
    for (const auto& r : j.at("rules")) {
      const auto metric = parse_metric(r.at("metric").get<std::string>());
      if (!metric) continue;
      auto rule = rule_from_json(r, r.at("patient_id").get<std::string>(), *metric);
      rules_[{rule.patient_id, rule.metric}] = rule;
    }
  }
}

void AlertEngine::save_rules() {
  if (root_.empty()) return;
  nlohmann::ordered_json j;
  j["rules"] = nlohmann::ordered_json::array();
  for (const auto& [key, r] : rules_) j["rules"].push_back(rule_to_json(r));
  util::write_file_atomic(root_ / "rules.json", j.dump(2) + "\n");
}

std::optional<Alert> AlertEngine::on_sample(const VitalSample& sample) {
  std::optional<Alert> fired;
  {
    std::lock_guard lock(mu_);
    const Key key{sample.patient_id, sample.metric};
    const auto it = rules_.find(key);
    const AlertRule rule = it != rules_.end() ? it->second : default_rule(sample.patient_id, sample.metric);
    if (!rule.enabled) return std::nullopt;
    auto& st = states_[key];
    const auto ev = evaluate(sample, rule, st);
    st = ev.state;
    if (!ev.fire) return std::nullopt;

    Alert a;
    a.alert_id = next_id();
    a.patient_id = sample.patient_id;
    a.metric = sample.metric;
    a.value = sample.value;
    a.rule_min = rule.min;
    a.rule_max = rule.max;
    a.sample_ts_ms = sample.ts_ms;
    a.severity = rule.severity;
    a.message = std::string(metric_code(sample.metric)) + " " + format_value(sample.value) + " outside [" +
                format_value(rule.min) + ", " + format_value(rule.max) + "]";
    a.created_ts_ms = clock_.now_ms();
    nlohmann::ordered_json rec;
    rec["op"] = "create";
    rec["alert"] = alert_to_json(a);
    append_log(rec);
    alerts_[a.alert_id] = a;
    fired = a;
  }
  spdlog::info("alert {} for {}: {}", fired->alert_id, fired->patient_id, fired->message);
  bus_.publish(AlertEvent{AlertEvent::Kind::Created, *fired});
  return fired;
}

Alert AlertEngine::trigger_manual(const Actor& user, const std::string& patient_id, const std::string& message,
                                  Severity severity) {
  if (!user.is_staff_or_admin()) throw Error(ErrorCode::Forbidden, "family accounts cannot raise alerts");
  if (message.empty()) throw Error(ErrorCode::ValidationError, "message must not be empty");
  if (util::utf8_length(message) > kMaxManualMessageChars) {
    throw Error(ErrorCode::ValidationError, "message longer than 500 characters");
  }
  if (severity == Severity::Info) throw Error(ErrorCode::ValidationError, "manual alerts need warning or critical severity");
  Alert a;
  {
    std::lock_guard lock(mu_);
    a.alert_id = next_id();
    a.patient_id = patient_id;
    a.raised_by = user.user_id;
    a.raised_by_name = user.display_name;
    a.message = message;
    a.severity = severity;
    a.created_ts_ms = clock_.now_ms();
    nlohmann::ordered_json rec;
    rec["op"] = "create";
    rec["alert"] = alert_to_json(a);
    append_log(rec);
    alerts_[a.alert_id] = a;
  }
  bus_.publish(AlertEvent{AlertEvent::Kind::Created, a});
  return a;
}

Alert AlertEngine::acknowledge(const Actor& user, const std::string& alert_id) {
  if (!user.is_staff_or_admin()) throw Error(ErrorCode::Forbidden, "family accounts cannot acknowledge alerts");
  Alert a;
  {
    std::lock_guard lock(mu_);
    const auto it = alerts_.find(alert_id);
    if (it == alerts_.end()) throw Error(ErrorCode::NotFound, "no alert " + alert_id);
    if (it->second.state == AlertState::Acked) throw Error(ErrorCode::AlreadyAcked, "alert " + alert_id + " already acknowledged");
    const auto now = clock_.now_ms();
    nlohmann::ordered_json rec;
    rec["op"] = "ack";
    rec["alert_id"] = alert_id;
    rec["acked_by"] = user.user_id;
    rec["acked_ts_ms"] = now;
    append_log(rec);
    it->second.state = AlertState::Acked;
    it->second.acked_by = user.user_id;
    it->second.acked_ts_ms = now;
    a = it->second;
  }
  bus_.publish(AlertEvent{AlertEvent::Kind::Acked, a});
  return a;
}

std::vector<Alert> AlertEngine::list(const AlertFilter& filter) const {
  std::vector<Alert> out;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, a] : alerts_) {
      if (filter.state && a.state != *filter.state) continue;
      if (filter.patient_id && a.patient_id != *filter.patient_id) continue;
      if (filter.since_ms && a.created_ts_ms < *filter.since_ms) continue;
      out.push_back(a);
    }
  }
  std::sort(out.begin(), out.end(), [](const Alert& x, const Alert& y) {
    return std::tie(x.created_ts_ms, x.alert_id) > std::tie(y.created_ts_ms, y.alert_id);
  });
  return out;
}

std::optional<Alert> AlertEngine::get(const std::string& alert_id) const {
  std::lock_guard lock(mu_);
  const auto it = alerts_.find(alert_id);
  if (it == alerts_.end()) return std::nullopt;
  return it->second;
}

AlertRule AlertEngine::set_rule(AlertRule rule) {
  rule.validate();
  if (rule.rule_id.empty()) rule.rule_id = default_rule(rule.patient_id, rule.metric).rule_id;
  std::lock_guard lock(mu_);
  const Key key{rule.patient_id, rule.metric};
  rules_[key] = rule;
  states_.erase(key);
  save_rules();
  return rule;
}

AlertRule AlertEngine::rule(const std::string& patient_id, MetricKind metric) const {
  std::lock_guard lock(mu_);
  const auto it = rules_.find({patient_id, metric});
  return it != rules_.end() ? it->second : default_rule(patient_id, metric);
}

std::vector<AlertRule> AlertEngine::rules(const std::string& patient_id) const {
  std::vector<AlertRule> out;
  for (const auto m : kAllMetrics) out.push_back(rule(patient_id, m));
  return out;
}

RuleState AlertEngine::state(const std::string& patient_id, MetricKind metric) const {
  std::lock_guard lock(mu_);
  const auto it = states_.find({patient_id, metric});
  return it != states_.end() ? it->second : RuleState{};
}

}  // namespace lify
