#pragma once

// Minimal embedded MQTT 3.1.1 broker for tests, demos and fault injection:
// CONNECT, SUBSCRIBE, PUBLISH (QoS 0/1), PUBACK, PING and DISCONNECT.
//
// Persistent sessions (clean_session = 0) keep their subscriptions, their
// unacknowledged QoS 1 deliveries and a queue of messages that arrived while
// they were offline. stop() drops every connection but keeps persistent
// sessions, so stop()/start() models a broker restart with session storage.

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "lify/mqtt/packet.hpp"
#include "lify/net.hpp"

namespace lify::mqtt {

struct BrokerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 = ephemeral; kept across restarts once chosen
  bool tls = true;
  std::filesystem::path cert_path;
  std::filesystem::path key_path;
  std::size_t max_queued_per_session = 100'000;
};

struct BrokerStats {
  std::uint64_t connections = 0;
  std::uint64_t rejected_handshakes = 0;
  std::uint64_t publishes_in = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t dropped = 0;
};

class Broker {
 public:
  explicit Broker(BrokerOptions options);
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  void start();
  /// Closes the listener and every client connection.
  void stop();
  bool running() const noexcept { return running_; }
  std::uint16_t port() const noexcept { return port_; }
  net::Endpoint endpoint() const;

  BrokerStats stats() const;
  std::size_t session_count() const;
  std::size_t connected_count() const;

 private:
  struct Session;
  struct Client;

  void accept_loop();
  void serve(std::shared_ptr<Client> client);
  void route(const Publish& msg);
  void deliver(Session& s, Publish msg);  // mu_ held
  void drop_client(const std::shared_ptr<Client>& client);

  BrokerOptions options_;
  std::optional<net::TlsContext> tls_;
  std::unique_ptr<net::Listener> listener_;
  std::thread acceptor_;
  std::atomic<bool> running_{false};
  std::uint16_t port_ = 0;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::set<std::shared_ptr<Client>> clients_;
  std::vector<std::thread> workers_;
  BrokerStats stats_;
};

}  // namespace lify::mqtt
