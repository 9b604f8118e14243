#pragma once

// Blocking-style TCP/TLS streams on top of non-blocking sockets and OpenSSL.
// One thread may read while others write; SSL state is guarded internally.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

using SSL_CTX = struct ssl_ctx_st;
using SSL = struct ssl_st;

namespace lify::net {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  bool tls = true;

  std::string to_string() const;
};

/// mqtts://host[:port] (TLS, default 8883) or mqtt://host[:port] (plaintext,
/// default 1883). A bare host:port is treated as mqtts.
Endpoint parse_broker_url(std::string_view url);

/// "host:port" for listen addresses.
std::pair<std::string, std::uint16_t> parse_host_port(std::string_view text, std::uint16_t default_port);

class TlsContext {
 public:
  /// Verifies the peer against `ca_path` (PEM). TLS 1.2 minimum.
  static TlsContext client(const std::filesystem::path& ca_path);
  static TlsContext server(const std::filesystem::path& cert_path, const std::filesystem::path& key_path);

  SSL_CTX* get() const noexcept { return ctx_.get(); }

 private:
  explicit TlsContext(SSL_CTX* ctx);
  std::shared_ptr<SSL_CTX> ctx_;
};

class Connection {
 public:
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  /// Throws Error(NotConnected) when the TCP connection fails or the peer
  /// drops mid-handshake, and Error(TlsError) when the TLS protocol or
  /// certificate verification fails (not worth retrying).
  static std::unique_ptr<Connection> connect(const Endpoint& ep, const TlsContext* tls,
                                             std::chrono::milliseconds timeout);

  /// Server side TLS handshake on an accepted socket.
  void accept_tls(const TlsContext& tls, std::chrono::milliseconds timeout);

  /// Returns 0 on timeout. Throws Error(NotConnected) once the peer is gone.
  std::size_t read_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout);
  void write_all(std::span<const std::uint8_t> data, std::chrono::milliseconds timeout = std::chrono::seconds(10));

  /// Wakes any blocked reader; subsequent I/O fails.
  void close() noexcept;

  bool is_tls() const noexcept { return ssl_ != nullptr; }
  const std::string& peer() const noexcept { return peer_; }

 private:
  friend class Listener;
  Connection(int fd, std::string peer);

  void handshake(bool server, std::chrono::milliseconds timeout);

  int fd_;
  SSL* ssl_ = nullptr;
  std::string peer_;
  std::mutex io_;
  bool closed_ = false;
};

class Listener {
 public:
  /// Port 0 picks an ephemeral port.
  Listener(const std::string& host, std::uint16_t port);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  /// Returns nullptr on timeout or after close().
  std::unique_ptr<Connection> accept(std::chrono::milliseconds timeout);
  void close() noexcept;

 private:
  int fd_;
  std::uint16_t port_;
};

/// Self-signed CA plus a server certificate for localhost/127.0.0.1.
struct DevCertificates {
  std::filesystem::path ca_cert;
  std::filesystem::path ca_key;
  std::filesystem::path server_cert;
  std::filesystem::path server_key;
};

/// Writes ca.pem, ca.key, server.pem and server.key into `dir`; existing
/// files are reused.
DevCertificates ensure_dev_certificates(const std::filesystem::path& dir);

/// Process-wide setup (SIGPIPE ignored, OpenSSL initialised). Idempotent.
void init();

}  // namespace lify::net
