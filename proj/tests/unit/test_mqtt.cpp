#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <random>

#include "lify/error.hpp"
#include "lify/mqtt/broker.hpp"
#include "lify/mqtt/client.hpp"
#include "lify/mqtt/packet.hpp"
#include "test_support.hpp"

using namespace lify;
using namespace lify::mqtt;
using lify::testing::dev_certs;
using lify::testing::eventually;

namespace {

BrokerOptions tls_broker() {
  BrokerOptions o;
  o.cert_path = dev_certs().server_cert;
  o.key_path = dev_certs().server_key;
  return o;
}

ClientOptions client_for(const Broker& b, const std::string& id, bool clean = true) {
  ClientOptions o;
  o.endpoint = b.endpoint();
  o.ca_path = dev_certs().ca_cert;
  o.client_id = id;
  o.clean_session = clean;
  o.keepalive_s = 5;
  return o;
}

struct Inbox {
  std::mutex mu;
  std::vector<Publish> messages;
  void operator()(const Publish& p) {
    std::lock_guard lock(mu);
    messages.push_back(p);
  }
  std::size_t size() {
    std::lock_guard lock(mu);
    return messages.size();
  }
};

}  // namespace

TEST(MqttCodec, RandomPacketsRoundTrip) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> byte(0, 255), len(0, 300), kind(0, 5);
  const auto text = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + byte(rng) % 26));
    return s;
  };
  std::vector<Packet> sent;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 500; ++i) {
    Packet p;
    switch (kind(rng)) {
      case 0: p = Connect{text(1 + len(rng) % 20), byte(rng) % 2 == 0, static_cast<std::uint16_t>(byte(rng)), {}, {}, 4}; break;
      case 1: {
        const std::uint8_t qos = byte(rng) % 2;
        std::string payload;
        for (int k = len(rng) * 50; k > 0; --k) payload.push_back(static_cast<char>(byte(rng)));
        p = Publish{"lify/v1/telemetry/" + text(5), payload, qos, false, qos == 1 && byte(rng) % 2 == 0,
                    static_cast<std::uint16_t>(qos ? 1 + byte(rng) : 0)};
        break;
      }
      case 2: p = Puback{static_cast<std::uint16_t>(1 + byte(rng) * 200)}; break;
      case 3: p = Subscribe{7, {{"lify/v1/telemetry/+", 1}, {"a/#", 0}}}; break;
      case 4: p = Suback{7, {1, 0x80}}; break;
      default: p = Pingreq{}; break;
    }
    const auto bytes = encode(p);
    stream.insert(stream.end(), bytes.begin(), bytes.end());
    sent.push_back(p);
  }
  // deliver in arbitrary chunk sizes
  PacketReader reader(1 << 20);
  std::vector<Packet> got;
  std::size_t off = 0;
  while (off < stream.size()) {
    const std::size_t n = std::min<std::size_t>(stream.size() - off, 1 + static_cast<std::size_t>(byte(rng)) * 3);
    reader.feed(std::span<const std::uint8_t>(stream.data() + off, n));
    off += n;
    while (auto p = reader.next()) got.push_back(*p);
  }
  EXPECT_EQ(got, sent);
}

TEST(MqttCodec, RejectsMalformed) {
  PacketReader r;
  const std::uint8_t bad_len[] = {0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0x01};
  r.feed(bad_len);
  EXPECT_THROW(r.next(), Error);

  PacketReader small(16);
  const auto big = encode(Publish{"t", std::string(100, 'x'), 0, false, false, 0});
  small.feed(big);
  EXPECT_THROW(small.next(), Error);

  PacketReader wildcard;
  wildcard.feed(encode(Publish{"a/+", "x", 0, false, false, 0}));
  EXPECT_THROW(wildcard.next(), Error);
}

TEST(MqttTopics, Matching) {
  EXPECT_TRUE(topic_matches("lify/v1/telemetry/+", "lify/v1/telemetry/dev-01"));
  EXPECT_FALSE(topic_matches("lify/v1/telemetry/+", "lify/v1/telemetry/dev-01/x"));
  EXPECT_FALSE(topic_matches("lify/v1/telemetry/+", "lify/v1/telemetry"));
  EXPECT_TRUE(topic_matches("lify/#", "lify/v1/telemetry/dev-01"));
  EXPECT_TRUE(topic_matches("lify/#", "lify"));
  EXPECT_TRUE(topic_matches("#", "anything/at/all"));
  EXPECT_TRUE(topic_matches("a/+/c", "a/b/c"));
  EXPECT_FALSE(topic_matches("a/b", "a/b/c"));
  EXPECT_FALSE(topic_matches("a/b/c", "a/b"));
  EXPECT_TRUE(valid_topic_filter("a/+/#"));
  EXPECT_FALSE(valid_topic_filter("a/#/b"));
  EXPECT_FALSE(valid_topic_filter("a/b+"));
}

TEST(MqttTls, PublishSubscribeQos1) {
  Broker broker(tls_broker());
  broker.start();

  Inbox inbox;
  Client sub(client_for(broker, "sub"));
  sub.set_message_handler(std::ref(inbox));
  sub.connect();
  sub.subscribe({{"lify/v1/telemetry/+", 1}});

  Client pub(client_for(broker, "pub"));
  pub.connect();
  for (int i = 0; i < 20; ++i) pub.publish("lify/v1/telemetry/dev-01", "m" + std::to_string(i), 1);
  pub.publish("other/topic", "ignored", 1);

  ASSERT_TRUE(eventually([&] { return inbox.size() == 20; }));
  std::lock_guard lock(inbox.mu);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(inbox.messages[static_cast<std::size_t>(i)].payload, "m" + std::to_string(i));
    EXPECT_EQ(inbox.messages[static_cast<std::size_t>(i)].qos, 1);
  }
}

TEST(MqttTls, PlaintextEndpointRefusedWhenTlsRequired) {
  Broker broker(tls_broker());
  broker.start();
  auto opts = client_for(broker, "plain");
  opts.endpoint.tls = false;
  Client c(opts);
  try {
    c.connect();
    FAIL() << "plaintext endpoint accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  EXPECT_EQ(broker.stats().connections, 0u);
}

TEST(MqttTls, BrokerRejectsPlaintextClients) {
  Broker broker(tls_broker());
  broker.start();
  auto opts = client_for(broker, "plain");
  opts.endpoint.tls = false;
  opts.tls_required = false;
  opts.connect_timeout = std::chrono::seconds(3);
  Client c(opts);
  EXPECT_THROW(c.connect(), Error);
  EXPECT_FALSE(c.connected());
  EXPECT_TRUE(eventually([&] { return broker.stats().rejected_handshakes == 1; }));
}

TEST(MqttTls, TlsClientAgainstPlaintextBrokerFails) {
  BrokerOptions o;
  o.tls = false;
  Broker broker(o);
  broker.start();
  auto opts = client_for(broker, "c");
  opts.endpoint.tls = true;
  opts.connect_timeout = std::chrono::seconds(3);
  Client c(opts);
  try {
    c.connect();
    FAIL() << "handshake with plaintext broker succeeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TlsError);
  }
}

TEST(MqttTls, UntrustedCaFails) {
  lify::testing::TempDir other;
  const auto foreign = net::ensure_dev_certificates(other.path());
  Broker broker(tls_broker());
  broker.start();
  auto opts = client_for(broker, "c");
  opts.ca_path = foreign.ca_cert;
  Client c(opts);
  try {
    c.connect();
    FAIL() << "untrusted certificate accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TlsError);
  }
}

TEST(MqttTls, ConnectionRefusedIsNotConnected) {
  std::uint16_t port = 0;
  {
    Broker broker(tls_broker());
    broker.start();
    port = broker.port();
  }
  ClientOptions opts;
  opts.endpoint = {"127.0.0.1", port, true};
  opts.ca_path = dev_certs().ca_cert;
  opts.client_id = "c";
  Client c(opts);
  try {
    c.connect();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotConnected);
  }
}

TEST(MqttBroker, PersistentSessionSurvivesRestart) {
  Broker broker(tls_broker());
  broker.start();

  Inbox inbox;
  auto sub_opts = client_for(broker, "gateway", false);
  std::atomic<int> lost{0};
  {
    Client sub(sub_opts);
    sub.set_message_handler(std::ref(inbox));
    sub.set_connection_lost_handler([&](const std::string&) { ++lost; });
    sub.connect();
    EXPECT_FALSE(sub.session_present());
    sub.subscribe({{"lify/v1/telemetry/+", 1}});

    broker.stop();
    ASSERT_TRUE(eventually([&] { return !sub.connected(); }));
    EXPECT_EQ(lost.load(), 1);
    broker.start();

    // the publisher reconnects first; the subscriber is still offline
    Client pub(client_for(broker, "agent"));
    pub.connect();
    for (int i = 0; i < 5; ++i) pub.publish("lify/v1/telemetry/dev-01", std::to_string(i), 1);
  }

  Client sub(sub_opts);
  sub.set_message_handler(std::ref(inbox));
  sub.connect();
  EXPECT_TRUE(sub.session_present());
  ASSERT_TRUE(eventually([&] { return inbox.size() == 5; }));
}

TEST(MqttBroker, UnackedDeliveryIsRedelivered) {
  Broker broker(tls_broker());
  broker.start();
  auto sub_opts = client_for(broker, "flaky", false);

  std::atomic<int> attempts{0};
  {
    Client sub(sub_opts);
    sub.set_message_handler([&](const Publish&) {
      ++attempts;
      throw std::runtime_error("storage down");
    });
    sub.connect();
    sub.subscribe({{"x/#", 1}});
    Client pub(client_for(broker, "p"));
    pub.connect();
    pub.publish("x/1", "payload", 1);
    ASSERT_TRUE(eventually([&] { return attempts.load() == 1; }));
  }

  Inbox inbox;
  Client sub(sub_opts);
  sub.set_message_handler(std::ref(inbox));
  sub.connect();
  ASSERT_TRUE(eventually([&] { return inbox.size() == 1; }));
  std::lock_guard lock(inbox.mu);
  EXPECT_TRUE(inbox.messages[0].dup);
  EXPECT_EQ(inbox.messages[0].payload, "payload");
}

TEST(MqttBroker, CleanSessionDiscardsState) {
  Broker broker(tls_broker());
  broker.start();
  {
    Client c(client_for(broker, "temp", true));
    c.connect();
    c.subscribe({{"x/#", 1}});
    EXPECT_EQ(broker.session_count(), 1u);
  }
  EXPECT_TRUE(eventually([&] { return broker.session_count() == 0; }));
}

TEST(BrokerUrl, Parsing) {
  auto ep = net::parse_broker_url("mqtts://broker.local:9999");
  EXPECT_EQ(ep.host, "broker.local");
  EXPECT_EQ(ep.port, 9999);
  EXPECT_TRUE(ep.tls);
  ep = net::parse_broker_url("mqtt://127.0.0.1");
  EXPECT_FALSE(ep.tls);
  EXPECT_EQ(ep.port, 1883);
  EXPECT_EQ(net::parse_broker_url("localhost").port, 8883);
  EXPECT_THROW(net::parse_broker_url("http://x"), Error);
  EXPECT_THROW(net::parse_broker_url("mqtts://x:99999"), Error);
}
