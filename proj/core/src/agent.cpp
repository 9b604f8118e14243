#include "lify/agent.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>

#include "lify/backoff.hpp"
#include "lify/config_util.hpp"
#include "lify/error.hpp"

namespace lify {

using namespace std::chrono_literals;

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  static constexpr std::string_view kSection = "agent";
  config::require_keys(j,
                       {"broker_url", "tls_required", "ca", "device_id", "patient_id", "period", "start_ms", "buffer",
                        "cycles", "drain_timeout", "seed", "base_hr", "base_temp", "base_spo2", "noise_snr_db",
                        "ppg_rate_hz", "ppg_window_s", "drift", "anomalies"},
                       kSection);
  AgentConfig c;
  config::read(j, "broker_url", c.broker_url, kSection);
  config::read(j, "tls_required", c.tls_required, kSection);
  if (j.contains("ca")) c.ca_path = j.at("ca").get<std::string>();
  config::read(j, "device_id", c.device_id, kSection);
  config::read(j, "patient_id", c.patient_id, kSection);
  if (j.contains("period")) c.period_ms = config::duration_ms(j.at("period"), "agent.period");
  if (j.contains("start_ms") && !j.at("start_ms").is_null()) {
    std::int64_t start = 0;
    config::read(j, "start_ms", start, kSection);
    c.start_ms = start;
  }
  config::read(j, "buffer", c.buffer_capacity, kSection);
  config::read(j, "cycles", c.max_cycles, kSection);
  if (j.contains("drain_timeout")) c.drain_timeout_ms = config::duration_ms(j.at("drain_timeout"), "agent.drain_timeout");

  auto& p = c.patient;
  config::read(j, "seed", p.seed, kSection);
  config::read(j, "base_hr", p.base_hr, kSection);
  config::read(j, "base_temp", p.base_temp, kSection);
  config::read(j, "base_spo2", p.base_spo2, kSection);
  config::read(j, "noise_snr_db", p.noise_snr_db, kSection);
  config::read(j, "ppg_rate_hz", p.ppg_rate_hz, kSection);
  config::read(j, "ppg_window_s", p.ppg_window_s, kSection);
  if (j.contains("drift")) {
    const auto& d = j.at("drift");
    config::require_keys(d, {"hr_step", "temp_step", "spo2_step", "reversion"}, "agent.drift");
    config::read(d, "hr_step", p.drift.hr_step, "agent.drift");
    config::read(d, "temp_step", p.drift.temp_step, "agent.drift");
    config::read(d, "spo2_step", p.drift.spo2_step, "agent.drift");
    config::read(d, "reversion", p.drift.reversion, "agent.drift");
  }
  if (j.contains("anomalies")) {
    std::vector<std::string> specs;
    config::read(j, "anomalies", specs, kSection);
    for (const auto& s : specs) p.anomalies.push_back(parse_anomaly(s));
  }
  return c;
}

void AgentConfig::apply_env() {
  if (const char* url = std::getenv("LIFY_BROKER_URL"); url && *url) broker_url = url;
}

void AgentConfig::validate() const {
  if (!is_valid_id(device_id)) throw Error(ErrorCode::ConfigError, "invalid device_id '" + device_id + "'");
  if (!is_valid_id(patient_id)) throw Error(ErrorCode::ConfigError, "invalid patient_id '" + patient_id + "'");
  if (period_ms <= 0) throw Error(ErrorCode::ConfigError, "period must be positive");
  if (buffer_capacity == 0) throw Error(ErrorCode::ConfigError, "buffer must hold at least one envelope");
  if (start_ms && *start_ms <= 0) throw Error(ErrorCode::ConfigError, "start_ms must be positive");
  const auto ep = net::parse_broker_url(broker_url);
  if (tls_required && !ep.tls) {
    throw Error(ErrorCode::ConfigError, "refusing plaintext broker " + ep.to_string() + " while tls_required is set");
  }
  patient.validate();
}

void publish_envelope(mqtt::Client& client, const TelemetryEnvelope& env) {
  const std::string payload = serialize(env);
  if (payload.size() > kMaxPayloadBytes) {
    throw Error(ErrorCode::PayloadTooLarge, "envelope is " + std::to_string(payload.size()) + " bytes");
  }
  client.publish(telemetry_topic(env.device_id), payload, 1, false);
}

DeviceAgent::DeviceAgent(AgentConfig config, Clock& clock)
    : config_(std::move(config)), clock_(clock), topic_(telemetry_topic(config_.device_id)) {}

DeviceAgent::~DeviceAgent() {
  stop();
  if (publisher_.joinable()) publisher_.join();
}

void DeviceAgent::set_envelope_hook(std::function<void(const TelemetryEnvelope&)> hook) { hook_ = std::move(hook); }

AgentStats DeviceAgent::stats() const {
  std::lock_guard lock(mu_);
  AgentStats s = stats_;
  s.buffered = buffer_.size();
  return s;
}

void DeviceAgent::stop() {
  std::lock_guard lock(mu_);
  stopping_ = true;
  cv_.notify_all();
}

bool DeviceAgent::wait_stoppable(std::chrono::milliseconds d) {
  std::unique_lock lock(mu_);
  return !cv_.wait_for(lock, d, [&] { return stopping_; });
}

void DeviceAgent::enqueue(const TelemetryEnvelope& env) {
  std::string payload = serialize(env);
  std::lock_guard lock(mu_);
  ++stats_.generated;
  if (payload.size() > kMaxPayloadBytes) {
    ++stats_.oversize;
    spdlog::error("agent {}: envelope ts={} is {} bytes, over the {} byte limit; discarded", config_.device_id,
                  env.ts_ms, payload.size(), kMaxPayloadBytes);
    return;
  }
  if (buffer_.size() >= config_.buffer_capacity) {
    buffer_.pop_front();
    ++stats_.dropped;
  }
  buffer_.push_back(Item{next_seq_++, std::move(payload)});
  cv_.notify_all();
}

void DeviceAgent::publisher_loop() {
  Backoff backoff(500ms, 30s, 0.2, mix_seed(config_.patient.seed, 0xb0ff));
  for (;;) {
    Item item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || finished_ || !buffer_.empty(); });
      if (stopping_ || buffer_.empty()) break;
      item = buffer_.front();
    }
    try {
      if (!client_->connected()) {
        client_->connect();
        backoff.reset();
        std::lock_guard lock(mu_);
        ++stats_.connects;
        stats_.connected = true;
        spdlog::info("agent {}: connected to {}", config_.device_id, client_->options().endpoint.to_string());
      }
      client_->publish(topic_, item.payload, 1, false);
      std::lock_guard lock(mu_);
      if (!buffer_.empty() && buffer_.front().seq == item.seq) buffer_.pop_front();
      ++stats_.published;
      cv_.notify_all();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::TlsError) {
        spdlog::critical("agent {}: {}", config_.device_id, e.what());
        std::lock_guard lock(mu_);
        fatal_ = std::current_exception();
        stopping_ = true;
        cv_.notify_all();
        break;
      }
      client_->disconnect();
      const auto delay = backoff.next();
      {
        std::lock_guard lock(mu_);
        ++stats_.publish_failures;
        stats_.connected = false;
      }
      spdlog::warn("agent {}: {}; {} buffered, retrying in {} ms", config_.device_id, e.what(), stats().buffered,
                   delay.count());
      wait_stoppable(delay);
    }
  }
  client_->disconnect();
  std::lock_guard lock(mu_);
  stats_.connected = false;
}

void DeviceAgent::run() {
  config_.validate();
  mqtt::ClientOptions opts;
  opts.endpoint = net::parse_broker_url(config_.broker_url);
  opts.ca_path = config_.ca_path;
  opts.tls_required = config_.tls_required;
  opts.client_id = "agent-" + config_.device_id;
  client_ = std::make_unique<mqtt::Client>(opts);
  publisher_ = std::thread([this] { publisher_loop(); });

  DeviceSimulator sim(config_.device_id, config_.patient_id, config_.patient);
  const std::int64_t origin = config_.start_ms.value_or(clock_.now_ms());
  const std::int64_t wall0 = clock_.now_ms();
  for (std::uint64_t k = 0; config_.max_cycles == 0 || k < config_.max_cycles; ++k) {
    const std::int64_t due = wall0 + static_cast<std::int64_t>(k) * config_.period_ms;
    bool stopped = false;
    for (;;) {
      {
        std::lock_guard lock(mu_);
        stopped = stopping_;
      }
      const std::int64_t left = due - clock_.now_ms();
      if (stopped || left <= 0) break;
      clock_.sleep_for(std::chrono::milliseconds(std::min<std::int64_t>(left, 100)));
    }
    if (stopped) break;
    const auto env = sim.acquire_cycle(origin + static_cast<std::int64_t>(k) * config_.period_ms);
    if (hook_) hook_(env);
    enqueue(env);
  }

  {
    std::unique_lock lock(mu_);
    finished_ = true;
    cv_.notify_all();
    if (!stopping_) {
      const bool drained = cv_.wait_for(lock, std::chrono::milliseconds(config_.drain_timeout_ms),
                                        [&] { return stopping_ || buffer_.empty(); });
      if (!drained) spdlog::warn("agent {}: {} envelopes left unsent", config_.device_id, buffer_.size());
    }
    stopping_ = true;
    cv_.notify_all();
  }
  publisher_.join();
  if (fatal_) std::rethrow_exception(fatal_);
}

}  // namespace lify
