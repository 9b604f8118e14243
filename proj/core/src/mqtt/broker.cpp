#include "lify/mqtt/broker.hpp"

#include <array>
#include <chrono>

#include "lify/error.hpp"

namespace lify::mqtt {

using namespace std::chrono_literals;

struct Broker::Session {
  std::string client_id;
  bool persistent = false;
  std::map<std::string, std::uint8_t> subscriptions;
  std::map<std::uint16_t, Publish> inflight;
  std::deque<Publish> queue;
  std::uint16_t last_id = 0;
  std::weak_ptr<Client> client;

  std::uint16_t next_id() {
    do {
      ++last_id;
    } while (last_id == 0 || inflight.contains(last_id));
    return last_id;
  }
};

struct Broker::Client {
  std::shared_ptr<net::Connection> conn;
  std::shared_ptr<Session> session;

  void write(const Packet& p) const {
    try {
      conn->write_all(encode(p), 5s);
    } catch (const Error&) {
      conn->close();
    }
  }
};

Broker::Broker(BrokerOptions options) : options_(std::move(options)), port_(options_.port) {}

Broker::~Broker() { stop(); }

net::Endpoint Broker::endpoint() const { return net::Endpoint{options_.host, port_, options_.tls}; }

void Broker::start() {
  if (running_) return;
  if (options_.tls && !tls_) tls_ = net::TlsContext::server(options_.cert_path, options_.key_path);
  listener_ = std::make_unique<net::Listener>(options_.host, port_);
  port_ = listener_->port();
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Broker::stop() {
  if (!running_.exchange(false)) return;
  if (listener_) listener_->close();
  if (acceptor_.joinable()) acceptor_.join();
  listener_.reset();

  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (const auto& c : clients_) c->conn->close();
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

BrokerStats Broker::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::size_t Broker::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::size_t Broker::connected_count() const {
  std::lock_guard lock(mu_);
  return clients_.size();
}

void Broker::accept_loop() {
  while (running_) {
    auto conn = listener_->accept(200ms);
    if (!conn) continue;
    auto client = std::make_shared<Client>();
    client->conn = std::shared_ptr<net::Connection>(std::move(conn));
    std::lock_guard lock(mu_);
    if (!running_) break;
    clients_.insert(client);
    ++stats_.connections;
    workers_.emplace_back([this, client] { serve(client); });
  }
}

void Broker::drop_client(const std::shared_ptr<Client>& client) {
  client->conn->close();
  std::lock_guard lock(mu_);
  clients_.erase(client);
  if (auto s = client->session) {
    if (s->client.lock() == client) {
      s->client.reset();
      if (!s->persistent) sessions_.erase(s->client_id);
    }
  }
}

void Broker::deliver(Session& s, Publish msg) {
  auto client = s.client.lock();
  msg.dup = false;
  msg.retain = false;
  if (!client) {
    if (!s.persistent || msg.qos == 0) return;
    if (s.queue.size() >= options_.max_queued_per_session) {
      s.queue.pop_front();
      ++stats_.dropped;
    }
    s.queue.push_back(std::move(msg));
    return;
  }
  if (msg.qos > 0) {
    msg.packet_id = s.next_id();
    s.inflight[msg.packet_id] = msg;
  }
  ++stats_.deliveries;
  client->write(msg);
}

void Broker::route(const Publish& msg) {
  std::lock_guard lock(mu_);
  ++stats_.publishes_in;
  for (auto& [id, session] : sessions_) {
    int granted = -1;
    for (const auto& [filter, qos] : session->subscriptions) {
      if (topic_matches(filter, msg.topic)) granted = std::max<int>(granted, qos);
    }
    if (granted < 0) continue;
    Publish copy = msg;
    copy.qos = static_cast<std::uint8_t>(std::min<int>(msg.qos, granted));
    deliver(*session, std::move(copy));
  }
}

void Broker::serve(std::shared_ptr<Client> client) {
  auto& conn = *client->conn;
  PacketReader reader;
  std::array<std::uint8_t, 16 * 1024> buf{};

  const auto next_packet = [&](std::chrono::milliseconds timeout) -> std::optional<Packet> {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto p = reader.next()) return p;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      const auto n = conn.read_some(buf, std::min(left, std::chrono::milliseconds(250)));
      reader.feed(std::span<const std::uint8_t>(buf.data(), n));
      if (!running_) return std::nullopt;
    }
  };

  try {
    if (options_.tls) {
      try {
        conn.accept_tls(*tls_, 10s);
      } catch (const Error&) {
        std::lock_guard lock(mu_);
        ++stats_.rejected_handshakes;
        throw;
      }
    }

    auto first = next_packet(10s);
    const auto* hello = first ? std::get_if<Connect>(&*first) : nullptr;
    if (!hello) throw Error(ErrorCode::ProtocolError, "expected CONNECT");
    if (hello->protocol_level != 4 && hello->protocol_level != 3) {
      client->write(Connack{false, kConnackBadProtocol});
      throw Error(ErrorCode::ProtocolError, "unsupported protocol level");
    }
    if (hello->client_id.empty() && !hello->clean_session) {
      client->write(Connack{false, kConnackIdentifierRejected});
      throw Error(ErrorCode::ProtocolError, "empty client id needs a clean session");
    }
    const std::string client_id =
        hello->client_id.empty() ? "anon-" + conn.peer() : hello->client_id;
    const std::int64_t keepalive_ms = std::int64_t{hello->keepalive_s} * 1000;

    {
      std::lock_guard lock(mu_);
      auto it = sessions_.find(client_id);
      bool present = false;
      if (it != sessions_.end()) {
        if (auto previous = it->second->client.lock()) previous->conn->close();
        if (hello->clean_session || !it->second->persistent) {
          sessions_.erase(it);
          it = sessions_.end();
        } else {
          present = true;
        }
      }
      if (it == sessions_.end()) {
        auto s = std::make_shared<Session>();
        s->client_id = client_id;
        s->persistent = !hello->clean_session;
        it = sessions_.emplace(client_id, std::move(s)).first;
      }
      client->session = it->second;
      it->second->client = client;
      client->write(Connack{present, kConnackAccepted});

      auto& s = *it->second;
      for (auto& [id, msg] : s.inflight) {
        Publish again = msg;
        again.dup = true;
        client->write(again);
      }
      while (!s.queue.empty()) {
        Publish msg = std::move(s.queue.front());
        s.queue.pop_front();
        deliver(s, std::move(msg));
      }
    }

    auto last_seen = std::chrono::steady_clock::now();
    while (running_) {
      auto packet = next_packet(250ms);
      const auto now = std::chrono::steady_clock::now();
      if (!packet) {
        if (keepalive_ms > 0 && now - last_seen > std::chrono::milliseconds(keepalive_ms * 3 / 2)) {
          throw Error(ErrorCode::NotConnected, "keepalive expired");
        }
        continue;
      }
      last_seen = now;

      if (const auto* pub = std::get_if<Publish>(&*packet)) {
        if (pub->qos > 1) throw Error(ErrorCode::ProtocolError, "QoS 2 is not supported");
        route(*pub);
        if (pub->qos == 1) {
          std::lock_guard lock(mu_);
          client->write(Puback{pub->packet_id});
        }
      } else if (const auto* ack = std::get_if<Puback>(&*packet)) {
        std::lock_guard lock(mu_);
        client->session->inflight.erase(ack->packet_id);
      } else if (const auto* sub = std::get_if<Subscribe>(&*packet)) {
        Suback reply{sub->packet_id, {}};
        std::lock_guard lock(mu_);
        for (const auto& [filter, qos] : sub->filters) {
          if (!valid_topic_filter(filter)) {
            reply.return_codes.push_back(kSubackFailure);
            continue;
          }
          const auto granted = static_cast<std::uint8_t>(std::min<int>(qos, 1));
          client->session->subscriptions[filter] = granted;
          reply.return_codes.push_back(granted);
        }
        client->write(reply);
      } else if (const auto* unsub = std::get_if<Unsubscribe>(&*packet)) {
        std::lock_guard lock(mu_);
        for (const auto& f : unsub->filters) client->session->subscriptions.erase(f);
        client->write(Unsuback{unsub->packet_id});
      } else if (std::holds_alternative<Pingreq>(*packet)) {
        std::lock_guard lock(mu_);
        client->write(Pingresp{});
      } else if (std::holds_alternative<Disconnect>(*packet)) {
        break;
      } else {
        throw Error(ErrorCode::ProtocolError, "unexpected packet from client");
      }
    }
  } catch (const std::exception&) {
    // connection-scoped failure; the session outlives it when persistent
  }
  drop_client(client);
}

}  // namespace lify::mqtt
