#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>

#include "commands.hpp"
#include "lify/agent.hpp"
#include "lify/app.hpp"
#include "lify/error.hpp"

namespace lify::cli {

namespace {

std::string numbered(const char* fmt, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, i);
  return buf;
}

}  // namespace

int cmd_simulate(const SimulateOptions& o) {
  AgentConfig base;
  if (!o.config.empty()) {
    const auto stack = StackConfig::load(o.config);
    if (stack.raw.contains("agent")) base = AgentConfig::from_json(stack.raw.at("agent"));
  }
  if (o.period) base.period_ms = parse_duration_ms(*o.period);
  if (o.broker_url) base.broker_url = *o.broker_url;
  if (o.tls_ca) base.ca_path = *o.tls_ca;
  if (o.tls_required) base.tls_required = *o.tls_required;
  if (o.start_ms) base.start_ms = *o.start_ms;
  base.apply_env();
  if (o.duration) {
    const auto total = parse_duration_ms(*o.duration);
    if (total <= 0 || base.period_ms <= 0) throw Error(ErrorCode::ConfigError, "duration and period must be positive");
    base.max_cycles = static_cast<std::uint64_t>(total / base.period_ms);
  }
  const std::uint64_t fleet_seed = o.seed.value_or(base.patient.seed);
  // Every device starts on the same tick so a fleet run is reproducible.
  if (!base.start_ms) base.start_ms = wall_now_ms();

  std::vector<AgentConfig> configs;
  for (int i = 1; i <= o.devices; ++i) {
    auto c = base;
    if (o.devices > 1) {
      c.device_id = numbered("dev-%02d", i);
      c.patient_id = numbered("p-%03d", i);
    }
    c.patient.seed = mix_seed(fleet_seed, static_cast<std::uint64_t>(i));
    configs.push_back(std::move(c));
  }
  for (const auto& spec : o.anomalies) {
    // "dev-02:temp_c=39.5@10s+5s" targets one device, a bare spec all of them.
    const auto colon = spec.find(':');
    const auto device = colon == std::string::npos ? std::string() : spec.substr(0, colon);
    const auto anomaly = parse_anomaly(colon == std::string::npos ? spec : spec.substr(colon + 1));
    bool matched = false;
    for (auto& c : configs) {
      if (device.empty() || c.device_id == device) {
        c.patient.anomalies.push_back(anomaly);
        matched = true;
      }
    }
    if (!matched) throw Error(ErrorCode::ConfigError, "anomaly targets unknown device " + device);
  }
  for (const auto& c : configs) c.validate();

  std::ofstream record;
  if (!o.record.empty()) {
    record.open(o.record, std::ios::trunc);
    if (!record) throw Error(ErrorCode::ConfigError, "cannot write " + o.record.string());
  }
  std::mutex record_mu;

  install_signal_handlers();
  std::vector<std::unique_ptr<DeviceAgent>> agents;
  std::vector<std::thread> threads;
  std::vector<std::string> failures(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    agents.push_back(std::make_unique<DeviceAgent>(configs[i]));
    if (record.is_open()) {
      agents.back()->set_envelope_hook([&](const TelemetryEnvelope& env) {
        std::lock_guard lock(record_mu);
        record << serialize(env) << '\n';
        record.flush();
      });
    }
  }
  std::atomic<std::size_t> finished{0};
  for (std::size_t i = 0; i < agents.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        agents[i]->run();
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
      ++finished;
    });
  }
  while (finished < agents.size()) {
    if (g_interrupted) {
      for (auto& a : agents) a->stop();
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  for (auto& t : threads) t.join();

  int rc = kExitOk;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto st = agents[i]->stats();
    nlohmann::ordered_json j{{"device_id", configs[i].device_id},
                             {"patient_id", configs[i].patient_id},
                             {"generated", st.generated},
                             {"published", st.published},
                             {"dropped", st.dropped},
                             {"oversize", st.oversize},
                             {"publish_failures", st.publish_failures},
                             {"connects", st.connects},
                             {"buffered", st.buffered}};
    if (!failures[i].empty()) {
      j["error"] = failures[i];
      rc = kExitRuntime;
      spdlog::error("simulate: {}: {}", configs[i].device_id, failures[i]);
    }
    std::cout << j.dump() << '\n';
  }
  std::cout.flush();
  return rc;
}

}  // namespace lify::cli
