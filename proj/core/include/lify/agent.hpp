#pragma once

// Bedside device process: acquire one cycle, package it, publish it over
// MQTT/TLS. Acquisition and publishing are decoupled by a bounded retry
// buffer so a broker outage never stalls the acquisition cadence.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "lify/clock.hpp"
#include "lify/envelope.hpp"
#include "lify/mqtt/client.hpp"
#include "lify/simulator.hpp"

namespace lify {

struct AgentConfig {
  std::string broker_url = "mqtts://127.0.0.1:8883";
  bool tls_required = true;
  std::filesystem::path ca_path;
  std::string device_id = "dev-01";
  std::string patient_id = "p-001";
  std::int64_t period_ms = 1000;
  /// Timestamp of cycle 0. Unset means the wall clock at start; fixing it
  /// makes the envelope sequence reproducible.
  std::optional<std::int64_t> start_ms;
  std::size_t buffer_capacity = 1024;
  /// 0 = run until stopped.
  std::uint64_t max_cycles = 0;
  /// How long a bounded run keeps trying to flush its buffer at the end.
  std::int64_t drain_timeout_ms = 30'000;
  SimulatedPatientState patient;

  /// Reads the "agent" config section; unknown keys are a ConfigError.
  static AgentConfig from_json(const nlohmann::json& j);
  /// LIFY_BROKER_URL replaces the broker endpoint when set.
  void apply_env();
  void validate() const;
};

struct AgentStats {
  std::uint64_t generated = 0;
  std::uint64_t published = 0;
  std::uint64_t dropped = 0;  // evicted from a full buffer
  std::uint64_t oversize = 0;
  std::uint64_t publish_failures = 0;
  std::uint64_t connects = 0;
  std::size_t buffered = 0;
  bool connected = false;
};

/// Serializes `env` and publishes it QoS 1 to its telemetry topic, returning
/// after PUBACK. Throws Error(PayloadTooLarge) above kMaxPayloadBytes and
/// Error(NotConnected) when the session is down.
void publish_envelope(mqtt::Client& client, const TelemetryEnvelope& env);

class DeviceAgent {
 public:
  explicit DeviceAgent(AgentConfig config, Clock& clock = SystemClock::instance());
  ~DeviceAgent();
  DeviceAgent(const DeviceAgent&) = delete;
  DeviceAgent& operator=(const DeviceAgent&) = delete;

  /// Runs until stop() or max_cycles (then drains the buffer). Rethrows a
  /// fatal error: bad config, refused plaintext endpoint or TLS trust failure.
  void run();
  void stop();

  /// Called on the acquisition thread for every generated envelope.
  void set_envelope_hook(std::function<void(const TelemetryEnvelope&)> hook);
  AgentStats stats() const;
  const AgentConfig& config() const noexcept { return config_; }

 private:
  struct Item {
    std::uint64_t seq;
    std::string payload;
  };

  void enqueue(const TelemetryEnvelope& env);
  void publisher_loop();
  bool wait_stoppable(std::chrono::milliseconds d);

  AgentConfig config_;
  Clock& clock_;
  std::string topic_;
  std::unique_ptr<mqtt::Client> client_;
  std::function<void(const TelemetryEnvelope&)> hook_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> buffer_;
  std::uint64_t next_seq_ = 0;
  AgentStats stats_;
  bool stopping_ = false;   // hard stop, abandon the buffer
  bool finished_ = false;   // acquisition is over; publisher exits once drained
  std::exception_ptr fatal_;
  std::thread publisher_;
};

}  // namespace lify
