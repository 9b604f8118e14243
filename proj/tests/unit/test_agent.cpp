#include <gtest/gtest.h>

#include <cstdlib>
#include <mutex>
#include <set>

#include "lify/agent.hpp"
#include "lify/backoff.hpp"
#include "lify/error.hpp"
#include "lify/mqtt/broker.hpp"
#include "test_support.hpp"

using namespace lify;
using lify::testing::dev_certs;
using lify::testing::eventually;

namespace {

mqtt::BrokerOptions tls_broker() {
  mqtt::BrokerOptions o;
  o.cert_path = dev_certs().server_cert;
  o.key_path = dev_certs().server_key;
  return o;
}

AgentConfig agent_for(const mqtt::Broker& b, std::uint64_t cycles) {
  AgentConfig c;
  c.broker_url = b.endpoint().to_string();
  c.ca_path = dev_certs().ca_cert;
  c.device_id = "dev-01";
  c.patient_id = "p-001";
  c.start_ms = 1'700'000'000'000;
  c.max_cycles = cycles;
  c.drain_timeout_ms = 20'000;
  return c;
}

/// Persistent subscriber collecting received timestamps.
struct Sink {
  std::mutex mu;
  std::vector<TelemetryEnvelope> got;
  std::unique_ptr<mqtt::Client> client;

  void attach(const mqtt::Broker& b) {
    mqtt::ClientOptions o;
    o.endpoint = b.endpoint();
    o.ca_path = dev_certs().ca_cert;
    o.client_id = "sink";
    o.clean_session = false;
    client = std::make_unique<mqtt::Client>(o);
    client->set_message_handler([this](const mqtt::Publish& p) {
      std::lock_guard lock(mu);
      got.push_back(parse_envelope(p.payload));
    });
    client->connect();
    client->subscribe({{"lify/v1/telemetry/+", 1}});
  }
  std::set<std::int64_t> timestamps() {
    std::lock_guard lock(mu);
    std::set<std::int64_t> out;
    for (const auto& e : got) out.insert(e.ts_ms);
    return out;
  }
};

}  // namespace

TEST(AgentConfig, FromJson) {
  const auto c = AgentConfig::from_json(nlohmann::json::parse(R"({
    "broker_url": "mqtts://broker:8883", "device_id": "dev-07", "patient_id": "p-9",
    "period": "500ms", "seed": 42, "buffer": 16, "base_hr": 80,
    "anomalies": ["temp_c=39.5@10s+30s"], "drift": {"hr_step": 0}
  })"));
  EXPECT_EQ(c.device_id, "dev-07");
  EXPECT_EQ(c.period_ms, 500);
  EXPECT_EQ(c.patient.seed, 42u);
  EXPECT_EQ(c.buffer_capacity, 16u);
  EXPECT_DOUBLE_EQ(c.patient.base_hr, 80.0);
  EXPECT_DOUBLE_EQ(c.patient.drift.hr_step, 0.0);
  ASSERT_EQ(c.patient.anomalies.size(), 1u);
  EXPECT_EQ(c.patient.anomalies[0].start_ms, 10'000);

  EXPECT_THROW(AgentConfig::from_json(nlohmann::json::parse(R"({"perid": 1})")), Error);
  EXPECT_THROW(AgentConfig::from_json(nlohmann::json::parse(R"({"buffer": "lots"})")), Error);
}

TEST(AgentConfig, PlaintextRefusedUnderTlsRequired) {
  AgentConfig c;
  c.broker_url = "mqtt://127.0.0.1:1883";
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  c.tls_required = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(AgentConfig, EnvironmentOverridesBroker) {
  AgentConfig c;
  ::setenv("LIFY_BROKER_URL", "mqtts://elsewhere:9000", 1);
  c.apply_env();
  ::unsetenv("LIFY_BROKER_URL");
  EXPECT_EQ(c.broker_url, "mqtts://elsewhere:9000");
}

TEST(Agent, PayloadTooLarge) {
  mqtt::Client unused(mqtt::ClientOptions{});
  TelemetryEnvelope env;
  env.device_id = std::string(5000, 'd');
  env.patient_id = "p";
  env.ts_ms = 1;
  try {
    publish_envelope(unused, env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PayloadTooLarge);
  }
}

TEST(Agent, PublishesEveryCycle) {
  mqtt::Broker broker(tls_broker());
  broker.start();
  Sink sink;
  sink.attach(broker);

  ManualClock clock;
  DeviceAgent agent(agent_for(broker, 20), clock);
  std::vector<TelemetryEnvelope> generated;
  agent.set_envelope_hook([&](const TelemetryEnvelope& e) { generated.push_back(e); });
  agent.run();

  const auto s = agent.stats();
  EXPECT_EQ(s.generated, 20u);
  EXPECT_EQ(s.published, 20u);
  EXPECT_EQ(s.dropped, 0u);
  ASSERT_TRUE(eventually([&] { return sink.timestamps().size() == 20; }));
  std::lock_guard lock(sink.mu);
  for (std::size_t k = 0; k < 20; ++k) {
    EXPECT_EQ(generated[k].ts_ms, 1'700'000'000'000 + static_cast<std::int64_t>(k) * 1000);
    EXPECT_EQ(sink.got[k], generated[k]);  // ordered, lossless round trip
  }
}

TEST(Agent, SequenceIsReproducible) {
  const auto run_once = [] {
    mqtt::Broker broker(tls_broker());
    broker.start();
    ManualClock clock;
    DeviceAgent agent(agent_for(broker, 15), clock);
    std::vector<std::string> out;
    agent.set_envelope_hook([&](const TelemetryEnvelope& e) { out.push_back(serialize(e)); });
    agent.run();
    return out;
  };
  EXPECT_EQ(run_once(), run_once());
}

TEST(Agent, BufferOverflowDropsOldest) {
  std::uint16_t dead_port = 0;
  {
    mqtt::Broker b(tls_broker());
    b.start();
    dead_port = b.port();
  }
  AgentConfig c;
  c.broker_url = "mqtts://127.0.0.1:" + std::to_string(dead_port);
  c.ca_path = dev_certs().ca_cert;
  c.buffer_capacity = 5;
  c.max_cycles = 12;
  c.drain_timeout_ms = 300;
  c.start_ms = 1'700'000'000'000;
  ManualClock clock;
  DeviceAgent agent(c, clock);
  agent.run();
  const auto s = agent.stats();
  EXPECT_EQ(s.generated, 12u);
  EXPECT_EQ(s.dropped, 7u);
  EXPECT_EQ(s.buffered, 5u);
  EXPECT_EQ(s.published, 0u);
  EXPECT_GE(s.publish_failures, 1u);
}

TEST(Agent, OutageIsBridgedByBuffer) {
  mqtt::Broker broker(tls_broker());
  broker.start();
  Sink sink;
  sink.attach(broker);
  broker.stop();

  ManualClock clock;
  DeviceAgent agent(agent_for(broker, 30), clock);
  std::thread runner([&] { agent.run(); });
  ASSERT_TRUE(eventually([&] { return agent.stats().publish_failures >= 1; }));
  broker.start();
  sink.attach(broker);
  runner.join();

  std::set<std::int64_t> expected;
  for (int k = 0; k < 30; ++k) expected.insert(1'700'000'000'000 + k * 1000);
  ASSERT_TRUE(eventually([&] { return sink.timestamps() == expected; }));
  EXPECT_EQ(agent.stats().dropped, 0u);
}

TEST(Agent, UntrustedBrokerIsFatal) {
  lify::testing::TempDir other;
  const auto foreign = net::ensure_dev_certificates(other.path());
  mqtt::Broker broker(tls_broker());
  broker.start();
  auto c = agent_for(broker, 0);
  c.ca_path = foreign.ca_cert;
  ManualClock clock;
  DeviceAgent agent(c, clock);
  try {
    agent.run();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TlsError);
  }
}

TEST(Backoff, DoublesUpToCapWithJitter) {
  Backoff b(std::chrono::milliseconds(500), std::chrono::seconds(30), 0.2, 7);
  const std::int64_t nominal[] = {500, 1000, 2000, 4000, 8000, 16000, 30000, 30000, 30000};
  for (const auto n : nominal) {
    const auto d = b.next().count();
    EXPECT_LE(d, n);
    EXPECT_GE(d, n * 8 / 10);
  }
  b.reset();
  EXPECT_LE(b.next().count(), 500);
}
