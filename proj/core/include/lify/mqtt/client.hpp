#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lify/mqtt/packet.hpp"
#include "lify/net.hpp"

namespace lify::mqtt {

struct ClientOptions {
  net::Endpoint endpoint;
  std::filesystem::path ca_path;
  /// A plaintext endpoint is refused before any network activity.
  bool tls_required = true;
  std::string client_id;
  bool clean_session = true;
  std::uint16_t keepalive_s = 10;
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds ack_timeout{5000};
};

/// Synchronous MQTT 3.1.1 client. A background reader thread dispatches
/// inbound PUBLISH packets to the message handler and acknowledges QoS 1
/// deliveries only after the handler returns, so a handler that throws leaves
/// the message to be redelivered.
class Client {
 public:
  using MessageHandler = std::function<void(const Publish&)>;
  using LostHandler = std::function<void(const std::string& reason)>;

  explicit Client(ClientOptions options);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// Throws Error(ConfigError) for a refused plaintext endpoint,
  /// Error(NotConnected) for transport failures, Error(TlsError) for
  /// handshake/trust failures and Error(ProtocolError) when CONNACK refuses.
  void connect();
  void disconnect() noexcept;
  bool connected() const noexcept { return connected_.load(); }
  bool session_present() const noexcept { return session_present_; }

  /// QoS 1 blocks until PUBACK. Throws Error(NotConnected) on loss or
  /// ack timeout; the caller owns retrying.
  void publish(const std::string& topic, const std::string& payload, std::uint8_t qos = 1, bool retain = false);

  /// Blocks until SUBACK; throws Error(ProtocolError) if any filter failed.
  void subscribe(const std::vector<std::pair<std::string, std::uint8_t>>& filters);

  void set_message_handler(MessageHandler h);
  void set_connection_lost_handler(LostHandler h);

  const ClientOptions& options() const noexcept { return options_; }

 private:
  void reader_loop();
  void send(const Packet& p);
  std::shared_ptr<net::Connection> connection();
  std::uint16_t next_packet_id();
  void wait_ack(std::uint16_t id, std::unique_lock<std::mutex>& lock);
  void mark_lost(const std::string& reason);

  ClientOptions options_;
  std::optional<net::TlsContext> tls_;
  std::shared_ptr<net::Connection> conn_;  // guarded by mu_
  PacketReader inbound_;
  std::thread reader_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint16_t, std::optional<Packet>> pending_;  // packet id -> ack once received
  std::uint16_t last_id_ = 0;
  std::atomic<bool> connected_{false};
  std::atomic<bool> stopping_{false};
  bool session_present_ = false;
  std::atomic<std::int64_t> last_sent_ms_{0};
  std::int64_t last_received_ms_ = 0;

  std::mutex handler_mu_;
  MessageHandler on_message_;
  LostHandler on_lost_;
};

}  // namespace lify::mqtt
