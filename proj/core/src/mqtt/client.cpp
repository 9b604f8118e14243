#include "lify/mqtt/client.hpp"

#include <algorithm>
#include <array>

#include "lify/error.hpp"

namespace lify::mqtt {

namespace {

std::int64_t steady_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Client::Client(ClientOptions options) : options_(std::move(options)) {}

Client::~Client() { disconnect(); }

void Client::set_message_handler(MessageHandler h) {
  std::lock_guard lock(handler_mu_);
  on_message_ = std::move(h);
}

void Client::set_connection_lost_handler(LostHandler h) {
  std::lock_guard lock(handler_mu_);
  on_lost_ = std::move(h);
}

std::shared_ptr<net::Connection> Client::connection() {
  std::lock_guard lock(mu_);
  return conn_;
}

void Client::connect() {
  if (connected_) return;
  if (options_.tls_required && !options_.endpoint.tls) {
    throw Error(ErrorCode::ConfigError,
                "refusing plaintext broker endpoint " + options_.endpoint.to_string() + " while tls_required is set");
  }
  if (reader_.joinable()) reader_.join();
  if (options_.endpoint.tls && !tls_) tls_ = net::TlsContext::client(options_.ca_path);

  auto conn = std::shared_ptr<net::Connection>(
      net::Connection::connect(options_.endpoint, options_.endpoint.tls ? &*tls_ : nullptr, options_.connect_timeout));

  Connect hello;
  hello.client_id = options_.client_id;
  hello.clean_session = options_.clean_session;
  hello.keepalive_s = options_.keepalive_s;
  const auto bytes = encode(hello);
  conn->write_all(bytes);

  PacketReader reader;
  std::array<std::uint8_t, 4096> buf{};
  const auto deadline = std::chrono::steady_clock::now() + options_.connect_timeout;
  std::optional<Packet> first;
  while (!first) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw Error(ErrorCode::NotConnected, "no CONNACK from " + options_.endpoint.to_string());
    const auto n = conn->read_some(buf, left);
    reader.feed(std::span<const std::uint8_t>(buf.data(), n));
    first = reader.next();
  }
  const auto* ack = std::get_if<Connack>(&*first);
  if (!ack) throw Error(ErrorCode::ProtocolError, "expected CONNACK");
  if (ack->return_code != kConnackAccepted) {
    throw Error(ErrorCode::ProtocolError, "broker refused connection, return code " + std::to_string(ack->return_code));
  }

  {
    std::lock_guard lock(mu_);
    conn_ = conn;
    inbound_ = std::move(reader);
    pending_.clear();
    session_present_ = ack->session_present;
    last_received_ms_ = steady_ms();
  }
  last_sent_ms_ = steady_ms();
  stopping_ = false;
  connected_ = true;
  reader_ = std::thread([this] { reader_loop(); });
}

void Client::disconnect() noexcept {
  stopping_ = true;
  if (auto conn = connection()) {
    if (connected_) {
      try {
        conn->write_all(encode(Disconnect{}), std::chrono::milliseconds(500));
      } catch (...) {
      }
    }
    conn->close();
  }
  connected_ = false;
  cv_.notify_all();
  if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id()) reader_.join();
}

void Client::send(const Packet& p) {
  auto conn = connection();
  if (!conn || !connected_) throw Error(ErrorCode::NotConnected, "not connected");
  conn->write_all(encode(p));
  last_sent_ms_ = steady_ms();
}

std::uint16_t Client::next_packet_id() {
  do {
    ++last_id_;
  } while (last_id_ == 0 || pending_.contains(last_id_));
  return last_id_;
}

void Client::wait_ack(std::uint16_t id, std::unique_lock<std::mutex>& lock) {
  const bool ok = cv_.wait_for(lock, options_.ack_timeout, [&] {
    auto it = pending_.find(id);
    return !connected_ || (it != pending_.end() && it->second.has_value());
  });
  const bool acked = ok && pending_.contains(id) && pending_[id].has_value();
  if (!acked) {
    pending_.erase(id);
    throw Error(ErrorCode::NotConnected, connected_ ? "acknowledgement timed out" : "connection lost before acknowledgement");
  }
}

void Client::publish(const std::string& topic, const std::string& payload, std::uint8_t qos, bool retain) {
  Publish p{topic, payload, qos, retain, false, 0};
  if (qos == 0) {
    send(p);
    return;
  }
  std::unique_lock lock(mu_);
  if (!connected_) throw Error(ErrorCode::NotConnected, "not connected");
  p.packet_id = next_packet_id();
  pending_[p.packet_id] = std::nullopt;
  lock.unlock();
  try {
    send(p);
  } catch (...) {
    lock.lock();
    pending_.erase(p.packet_id);
    throw;
  }
  lock.lock();
  wait_ack(p.packet_id, lock);
  pending_.erase(p.packet_id);
}

void Client::subscribe(const std::vector<std::pair<std::string, std::uint8_t>>& filters) {
  std::unique_lock lock(mu_);
  if (!connected_) throw Error(ErrorCode::NotConnected, "not connected");
  Subscribe s{next_packet_id(), filters};
  pending_[s.packet_id] = std::nullopt;
  lock.unlock();
  send(s);
  lock.lock();
  wait_ack(s.packet_id, lock);
  const auto* ack = std::get_if<Suback>(&*pending_[s.packet_id]);
  const bool failed = !ack || ack->return_codes.size() != filters.size() ||
                      std::any_of(ack->return_codes.begin(), ack->return_codes.end(),
                                  [](std::uint8_t rc) { return rc == kSubackFailure; });
  pending_.erase(s.packet_id);
  if (failed) throw Error(ErrorCode::ProtocolError, "subscription refused by broker");
}

void Client::mark_lost(const std::string& reason) {
  const bool was_connected = connected_.exchange(false);
  if (auto conn = connection()) conn->close();
  cv_.notify_all();
  if (!was_connected || stopping_) return;
  LostHandler handler;
  {
    std::lock_guard lock(handler_mu_);
    handler = on_lost_;
  }
  if (handler) handler(reason);
}

void Client::reader_loop() {
  auto conn = connection();
  std::array<std::uint8_t, 16 * 1024> buf{};
  const std::int64_t keepalive_ms = std::int64_t{options_.keepalive_s} * 1000;
  try {
    for (;;) {
      // drain anything buffered during the handshake first
      std::optional<Packet> packet;
      {
        std::lock_guard lock(mu_);
        packet = inbound_.next();
      }
      if (!packet) {
        if (stopping_) return;
        const auto n = conn->read_some(buf, std::chrono::milliseconds(200));
        const std::int64_t now = steady_ms();
        if (n > 0) {
          std::lock_guard lock(mu_);
          inbound_.feed(std::span<const std::uint8_t>(buf.data(), n));
          last_received_ms_ = now;
        }
        if (keepalive_ms > 0) {
          if (now - last_sent_ms_ >= keepalive_ms / 2) send(Pingreq{});
          std::lock_guard lock(mu_);
          if (now - last_received_ms_ > keepalive_ms * 3 / 2) {
            throw Error(ErrorCode::NotConnected, "keepalive timeout");
          }
        }
        continue;
      }

      if (const auto* pub = std::get_if<Publish>(&*packet)) {
        MessageHandler handler;
        {
          std::lock_guard lock(handler_mu_);
          handler = on_message_;
        }
        bool handled = true;
        if (handler) {
          try {
            handler(*pub);
          } catch (...) {
            handled = false;
          }
        }
        if (handled && pub->qos == 1) send(Puback{pub->packet_id});
        continue;
      }

      std::uint16_t id = 0;
      if (const auto* a = std::get_if<Puback>(&*packet)) id = a->packet_id;
      else if (const auto* s = std::get_if<Suback>(&*packet)) id = s->packet_id;
      else if (const auto* u = std::get_if<Unsuback>(&*packet)) id = u->packet_id;
      if (id != 0) {
        std::lock_guard lock(mu_);
        if (auto it = pending_.find(id); it != pending_.end()) it->second = std::move(*packet);
        cv_.notify_all();
      }
    }
  } catch (const std::exception& e) {
    mark_lost(e.what());
  }
}

}  // namespace lify::mqtt
