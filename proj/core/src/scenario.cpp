#include "lify/scenario.hpp"

#include <sodium.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <memory>
#include <mutex>
#include <thread>

#include "lify/app.hpp"
#include "lify/config_util.hpp"
#include "lify/error.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kActions = {"start_agent", "stop_agent", "broker_down", "broker_up", "expect_alert", "end"};

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  randombytes_buf(buf.data(), buf.size());
  std::string out(bytes * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), buf.data(), buf.size());
  out.pop_back();
  return out;
}

std::string seconds_text(std::int64_t ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fs", static_cast<double>(ms) / 1000.0);
  return buf;
}

}  // namespace

ScenarioScript ScenarioScript::from_json(const nlohmann::json& j) {
  config::require_keys(j, {"name", "patients", "rules", "watchers", "actions"}, "scenario");
  ScenarioScript s;
  config::read(j, "name", s.name, "scenario");
  std::set<std::string> patient_ids;
  try {
    for (const auto& p : j.value("patients", nlohmann::json::array())) {
      s.patients.push_back(patient_from_json(p));
      if (s.patients.back().patient_id.empty()) throw Error(ErrorCode::ConfigError, "scenario patients need a patient_id");
      patient_ids.insert(s.patients.back().patient_id);
    }
    for (const auto& r : j.value("rules", nlohmann::json::array())) {
      const auto pid = r.at("patient_id").get<std::string>();
      const auto metric = parse_metric(r.at("metric").get<std::string>());
      if (!metric) throw Error(ErrorCode::ConfigError, "unknown rule metric " + r.at("metric").dump());
      s.rules.push_back(rule_from_json(r, pid, *metric));
      s.rules.back().validate();
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario: ") + e.what());
  }
  const auto known = [&](const std::string& pid, const std::string& where) {
    if (!patient_ids.contains(pid)) throw Error(ErrorCode::ConfigError, where + " references undefined patient " + pid);
  };
  for (const auto& r : s.rules) known(r.patient_id, "rule");
  for (const auto& w : j.value("watchers", nlohmann::json::array())) {
    config::require_keys(w, {"email", "role", "name", "patients", "chat_id"}, "scenario.watchers");
    ScenarioWatcher sw;
    config::read(w, "email", sw.email, "scenario.watchers");
    config::read(w, "role", sw.role, "scenario.watchers");
    config::read(w, "name", sw.name, "scenario.watchers");
    config::read(w, "patients", sw.patients, "scenario.watchers");
    config::read(w, "chat_id", sw.chat_id, "scenario.watchers");
    if (sw.email.empty() || !parse_role(sw.role)) throw Error(ErrorCode::ConfigError, "scenario watcher needs an email and a role");
    for (const auto& pid : sw.patients) known(pid, "watcher " + sw.email);
    s.watchers.push_back(std::move(sw));
  }
  std::int64_t last = 0;
  for (const auto& a : j.value("actions", nlohmann::json::array())) {
    ScenarioAction act;
    if (!a.is_object() || !a.contains("do") || !a.contains("at")) {
      throw Error(ErrorCode::ConfigError, "scenario actions need \"at\" and \"do\"");
    }
    act.kind = a.at("do").get<std::string>();
    if (!kActions.contains(act.kind)) throw Error(ErrorCode::ConfigError, "unknown scenario action '" + act.kind + "'");
    act.at_ms = config::duration_ms(a.at("at"), "scenario.at");
    if (act.at_ms < last) throw Error(ErrorCode::ConfigError, "scenario actions must be time-ordered");
    last = act.at_ms;
    act.args = a;
    act.args.erase("at");
    act.args.erase("do");
    if (act.kind == "start_agent") {
      for (const char* k : {"broker_url", "tls_required", "ca"}) {
        if (act.args.contains(k)) throw Error(ErrorCode::ConfigError, std::string("start_agent may not set ") + k);
      }
      const auto cfg = AgentConfig::from_json(act.args);
      known(cfg.patient_id, "start_agent");
    } else if (act.kind == "stop_agent") {
      config::require_keys(act.args, {"device_id"}, "stop_agent");
    } else if (act.kind == "expect_alert") {
      config::require_keys(act.args, {"patient_id", "metric", "within", "notify"}, "expect_alert");
      known(act.args.value("patient_id", std::string()), "expect_alert");
      if (act.args.contains("metric") && !parse_metric(act.args.at("metric").get<std::string>())) {
        throw Error(ErrorCode::ConfigError, "expect_alert: unknown metric " + act.args.at("metric").dump());
      }
      if (!act.args.contains("within")) throw Error(ErrorCode::ConfigError, "expect_alert needs \"within\"");
      config::duration_ms(act.args.at("within"), "expect_alert.within");
    } else {
      config::require_keys(act.args, {}, act.kind);
    }
    s.actions.push_back(std::move(act));
  }
  return s;
}

ScenarioScript ScenarioScript::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "scenario file not found: " + path.string());
  try {
    return from_json(nlohmann::json::parse(util::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, "scenario file " + path.string() + " is not valid JSON: " + e.what());
  }
}

bool ScenarioReport::passed() const {
  return std::all_of(expectations.begin(), expectations.end(), [](const auto& e) { return e.passed; });
}

nlohmann::json ScenarioReport::to_json() const {
  nlohmann::ordered_json j;
  j["scenario"] = name;
  j["passed"] = passed();
  j["expectations"] = nlohmann::ordered_json::array();
  for (const auto& e : expectations) {
    j["expectations"].push_back({{"expect", e.description}, {"passed", e.passed}, {"detail", e.detail}});
  }
  j["agents"] = nlohmann::ordered_json::object();
  for (const auto& [dev, st] : agents) {
    j["agents"][dev] = {{"generated", st.generated}, {"published", st.published}, {"dropped", st.dropped},
                        {"connects", st.connects}};
  }
  j["alerts"] = nlohmann::ordered_json::array();
  for (const auto& a : alerts) j["alerts"].push_back(alert_to_json(a));
  return nlohmann::json::parse(j.dump());
}

ScenarioReport run_scenario(const ScenarioScript& script, const ScenarioOptions& options) {
  if (sodium_init() < 0) throw Error(ErrorCode::IoError, "libsodium failed to initialise");
  const auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  const bool temporary = options.data_root.empty();
  const fs::path root = temporary ? fs::temp_directory_path() / ("lify-scenario-" + random_hex(6)) : options.data_root;

  StackConfig cfg;
  cfg.data_root = root;
  cfg.services = {"broker", "gateway", "alerts", "notifier"};
  cfg.broker.listen = "127.0.0.1:0";
  cfg.kdf = KdfCost::minimum();
  Stack stack(cfg);
  stack.start();

  // Seed patients, rules and watchers through the same stores the API uses.
  for (const auto& p : script.patients) stack.patients().create(p);
  for (const auto& r : script.rules) stack.alerts().set_rule(r);
  const auto admin = stack.accounts().register_user(std::nullopt, "scenario-admin@localhost", random_hex(16),
                                                    Role::Admin, "Scenario");
  for (const auto& w : script.watchers) {
    const auto u = stack.accounts().register_user(admin.actor(), w.email, random_hex(16), *parse_role(w.role),
                                                  w.name.empty() ? w.email : w.name);
    stack.accounts().set_links(admin.actor(), u.user_id, {w.patients.begin(), w.patients.end()});
    if (!w.chat_id.empty()) {
      const auto code = stack.bindings().issue_code(u.user_id);
      stack.bindings().bind_chat(u.user_id, w.chat_id, code.code);
    }
  }

  ScenarioReport report;
  report.name = script.name;
  std::mutex gen_mu;
  struct Running {
    std::unique_ptr<DeviceAgent> agent;
    std::thread thread;
    bool bounded = false;
  };
  std::map<std::string, Running> running;
  const auto finish = [&](const std::string& dev, bool hard) {
    auto it = running.find(dev);
    if (it == running.end()) return;
    if (hard) it->second.agent->stop();
    it->second.thread.join();
    report.agents[dev] = it->second.agent->stats();
    running.erase(it);
  };

  auto& clock = SystemClock::instance();
  const std::int64_t origin = clock.now_ms();
  report.origin_ms = origin;
  std::vector<const ScenarioAction*> expectations;
  try {
    for (const auto& act : script.actions) {
      for (std::int64_t left = origin + act.at_ms - clock.now_ms(); left > 0; left = origin + act.at_ms - clock.now_ms()) {
        clock.sleep_for(std::chrono::milliseconds(std::min<std::int64_t>(left, 50)));
      }
      log("t=" + seconds_text(act.at_ms) + " " + act.kind + (act.args.empty() ? "" : " " + act.args.dump()));
      if (act.kind == "start_agent") {
        auto cfg_agent = AgentConfig::from_json(act.args);
        cfg_agent.broker_url = stack.broker_url();
        cfg_agent.ca_path = stack.broker_ca();
        cfg_agent.tls_required = true;
        if (!cfg_agent.start_ms) cfg_agent.start_ms = origin + act.at_ms;
        const auto dev = cfg_agent.device_id;
        finish(dev, true);
        Running r;
        r.bounded = cfg_agent.max_cycles > 0;
        r.agent = std::make_unique<DeviceAgent>(cfg_agent);
        r.agent->set_envelope_hook([&report, &gen_mu, dev](const TelemetryEnvelope& env) {
          std::lock_guard lock(gen_mu);
          report.generated[dev].push_back(env);
        });
        auto* agent = r.agent.get();
        r.thread = std::thread([agent, dev] {
          try {
            agent->run();
          } catch (const std::exception& e) {
            spdlog::error("scenario: agent {} failed: {}", dev, e.what());
          }
        });
        running.emplace(dev, std::move(r));
      } else if (act.kind == "stop_agent") {
        finish(act.args.at("device_id").get<std::string>(), true);
      } else if (act.kind == "broker_down") {
        stack.broker()->stop();
      } else if (act.kind == "broker_up") {
        stack.broker()->start();
      } else if (act.kind == "expect_alert") {
        expectations.push_back(&act);
      } else if (act.kind == "end") {
        break;
      }
    }
  } catch (...) {
    for (auto& [dev, r] : running) {
      r.agent->stop();
      r.thread.join();
    }
    throw;
  }
  if (!stack.broker()->running()) stack.broker()->start();

  // Bounded agents drain their buffers; the rest stop now.
  std::vector<std::string> devices;
  for (const auto& [dev, r] : running) devices.push_back(dev);
  for (const auto& dev : devices) finish(dev, !running.at(dev).bounded);

  // Let ingestion and notification settle.
  std::uint64_t last_accepted = ~0ULL;
  for (int i = 0; i < 100; ++i) {
    const auto st = stack.gateway().stats();
    const auto seen = st.accepted + st.duplicates;
    if (seen == last_accepted) break;
    last_accepted = seen;
    clock.sleep_for(std::chrono::milliseconds(300));
  }
  stack.notifier()->wait_idle(std::chrono::seconds(60));

  report.alerts = stack.alerts().list();
  const auto receipts = stack.notifier()->receipts();
  for (const auto* act : expectations) {
    const auto pid = act->args.at("patient_id").get<std::string>();
    const bool by_metric = act->args.contains("metric");
    const MetricKind metric =
        by_metric ? parse_metric(act->args.at("metric").get<std::string>()).value_or(MetricKind::TempC) : MetricKind::TempC;
    const auto within = config::duration_ms(act->args.at("within"), "expect_alert.within");
    const auto chat = act->args.value("notify", std::string());
    const std::int64_t lo = origin + act->at_ms;
    const std::int64_t hi = lo + within;

    ExpectationResult res;
    res.description = "alert for " + pid + (by_metric ? " " + std::string(metric_code(metric)) : std::string()) +
                      " within [" + seconds_text(act->at_ms) + ", " + seconds_text(act->at_ms + within) + "]" +
                      (chat.empty() ? "" : " delivered to " + chat);
    std::vector<Alert> hits;
    for (const auto& a : report.alerts) {
      if (a.patient_id != pid || (by_metric && a.metric != metric)) continue;
      if (a.created_ts_ms >= lo && a.created_ts_ms <= hi) hits.push_back(a);
    }
    if (hits.empty()) {
      res.detail = "no matching alert";
      for (const auto& a : report.alerts) {
        if (a.patient_id == pid && (!by_metric || a.metric == metric)) {
          res.detail += "; " + a.alert_id + " at " + seconds_text(a.created_ts_ms - origin);
        }
      }
    } else {
      const auto& a = hits.back();  // list() is newest first
      res.passed = true;
      res.detail = a.alert_id + " created at " + seconds_text(a.created_ts_ms - origin);
      if (!chat.empty()) {
        const bool delivered = std::any_of(receipts.begin(), receipts.end(), [&](const DeliveryReceipt& r) {
          return r.alert_id == a.alert_id && r.chat_id == chat && r.outcome == DeliveryOutcome::Delivered;
        });
        res.passed = delivered;
        res.detail += delivered ? ", delivered to " + chat : ", not delivered to " + chat;
      }
    }
    report.expectations.push_back(std::move(res));
  }

  stack.stop();
  if (temporary && !options.keep_data) {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  return report;
}

}  // namespace lify
