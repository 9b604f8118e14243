#include "lify/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>

#include "lify/error.hpp"

namespace lify::net {

namespace {

using Clock = std::chrono::steady_clock;

std::string ssl_error_text() {
  std::string out;
  while (const unsigned long e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof buf);
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out.empty() ? "unknown TLS failure" : out;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

/// Returns false on timeout.
bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  for (;;) {
    const int r = ::poll(&p, 1, timeout_ms);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw Error(ErrorCode::NotConnected, std::string("poll: ") + std::strerror(errno));
    return r > 0;
  }
}

bool is_ip_literal(const std::string& host) {
  in6_addr buf{};
  return ::inet_pton(AF_INET, host.c_str(), &buf) == 1 || ::inet_pton(AF_INET6, host.c_str(), &buf) == 1;
}

}  // namespace

void init() {
  static std::once_flag once;
  std::call_once(once, [] {
    std::signal(SIGPIPE, SIG_IGN);
    OPENSSL_init_ssl(0, nullptr);
  });
}

std::string Endpoint::to_string() const {
  return std::string(tls ? "mqtts://" : "mqtt://") + host + ":" + std::to_string(port);
}

std::pair<std::string, std::uint16_t> parse_host_port(std::string_view text, std::uint16_t default_port) {
  std::string host(text);
  std::uint16_t port = default_port;
  if (const auto colon = text.rfind(':'); colon != std::string_view::npos) {
    host = std::string(text.substr(0, colon));
    const std::string p(text.substr(colon + 1));
    try {
      std::size_t used = 0;
      const long v = std::stol(p, &used);
      if (used != p.size() || v < 0 || v > 65535) throw std::out_of_range("port");
      port = static_cast<std::uint16_t>(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "invalid port in '" + std::string(text) + "'");
    }
  }
  if (host.empty()) host = "127.0.0.1";
  return {host, port};
}

Endpoint parse_broker_url(std::string_view url) {
  Endpoint ep;
  std::string_view rest = url;
  if (url.starts_with("mqtts://") || url.starts_with("ssl://") || url.starts_with("tls://")) {
    rest = url.substr(url.find("://") + 3);
    ep.tls = true;
  } else if (url.starts_with("mqtt://") || url.starts_with("tcp://")) {
    rest = url.substr(url.find("://") + 3);
    ep.tls = false;
  } else if (url.find("://") != std::string_view::npos) {
    throw Error(ErrorCode::ConfigError, "unsupported broker URL scheme in '" + std::string(url) + "'");
  }
  while (!rest.empty() && rest.back() == '/') rest.remove_suffix(1);
  auto [host, port] = parse_host_port(rest, ep.tls ? 8883 : 1883);
  ep.host = host;
  ep.port = port;
  return ep;
}

// ---------------------------------------------------------------------------

TlsContext::TlsContext(SSL_CTX* ctx) : ctx_(ctx, SSL_CTX_free) {}

TlsContext TlsContext::client(const std::filesystem::path& ca_path) {
  init();
  if (!std::filesystem::exists(ca_path)) {
    throw Error(ErrorCode::ConfigError, "CA file not found: " + ca_path.string());
  }
  SSL_CTX* ctx = SSL_CTX_new(TLS_client_method());
  if (!ctx) throw Error(ErrorCode::TlsError, ssl_error_text());
  TlsContext out(ctx);
  SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
  SSL_CTX_set_verify(ctx, SSL_VERIFY_PEER, nullptr);
  if (SSL_CTX_load_verify_locations(ctx, ca_path.c_str(), nullptr) != 1) {
    throw Error(ErrorCode::TlsError, "cannot load CA " + ca_path.string() + ": " + ssl_error_text());
  }
  SSL_CTX_set_mode(ctx, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  return out;
}

TlsContext TlsContext::server(const std::filesystem::path& cert_path, const std::filesystem::path& key_path) {
  init();
  for (const auto& p : {cert_path, key_path}) {
    if (!std::filesystem::exists(p)) throw Error(ErrorCode::ConfigError, "TLS file not found: " + p.string());
  }
  SSL_CTX* ctx = SSL_CTX_new(TLS_server_method());
  if (!ctx) throw Error(ErrorCode::TlsError, ssl_error_text());
  TlsContext out(ctx);
  SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
  if (SSL_CTX_use_certificate_chain_file(ctx, cert_path.c_str()) != 1 ||
      SSL_CTX_use_PrivateKey_file(ctx, key_path.c_str(), SSL_FILETYPE_PEM) != 1 ||
      SSL_CTX_check_private_key(ctx) != 1) {
    throw Error(ErrorCode::TlsError, "cannot load server certificate: " + ssl_error_text());
  }
  SSL_CTX_set_mode(ctx, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  return out;
}

// ---------------------------------------------------------------------------

Connection::Connection(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
  set_nonblocking(fd_);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::~Connection() {
  close();
  if (ssl_) SSL_free(ssl_);
  ::close(fd_);
}

std::unique_ptr<Connection> Connection::connect(const Endpoint& ep, const TlsContext* tls,
                                                std::chrono::milliseconds timeout) {
  init();
  const auto deadline = Clock::now() + timeout;

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::NotConnected, "resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    set_nonblocking(fd);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      if (!wait_fd(fd, POLLOUT, remaining_ms(deadline))) {
        ::close(fd);
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err == 0 ? 0 : -1;
      errno = err;
    }
    if (rc < 0) {
      last_error = std::strerror(errno);
      ::close(fd);
      continue;
    }
    std::unique_ptr<Connection> conn(new Connection(fd, ep.host + ":" + port));
    if (tls) {
      conn->ssl_ = SSL_new(tls->get());
      SSL_set_fd(conn->ssl_, fd);
      if (is_ip_literal(ep.host)) {
        X509_VERIFY_PARAM_set1_ip_asc(SSL_get0_param(conn->ssl_), ep.host.c_str());
      } else {
        SSL_set_tlsext_host_name(conn->ssl_, ep.host.c_str());
        SSL_set1_host(conn->ssl_, ep.host.c_str());
      }
      conn->handshake(false, std::chrono::milliseconds(std::max(remaining_ms(deadline), 1)));
    }
    return conn;
  }
  throw Error(ErrorCode::NotConnected, "connect " + ep.host + ":" + port + ": " + last_error);
}

void Connection::accept_tls(const TlsContext& tls, std::chrono::milliseconds timeout) {
  ssl_ = SSL_new(tls.get());
  SSL_set_fd(ssl_, fd_);
  handshake(true, timeout);
}

void Connection::handshake(bool server, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  std::lock_guard lock(io_);
  for (;;) {
    ERR_clear_error();
    const int rc = server ? SSL_accept(ssl_) : SSL_connect(ssl_);
    if (rc == 1) return;
    const int err = SSL_get_error(ssl_, rc);
    short events = 0;
    if (err == SSL_ERROR_WANT_READ) events = POLLIN;
    else if (err == SSL_ERROR_WANT_WRITE) events = POLLOUT;
    else if (err == SSL_ERROR_SSL) {
      std::string detail = ssl_error_text();
      if (!server) {
        const long verify = SSL_get_verify_result(ssl_);
        if (verify != X509_V_OK) detail += " (" + std::string(X509_verify_cert_error_string(verify)) + ")";
      }
      throw Error(ErrorCode::TlsError, "TLS handshake with " + peer_ + " failed: " + detail);
    } else {
      // the peer went away mid-handshake; transient, unlike a protocol or trust failure
      throw Error(ErrorCode::NotConnected, "TLS handshake with " + peer_ + " interrupted");
    }
    if (!wait_fd(fd_, events, remaining_ms(deadline))) {
      throw Error(ErrorCode::NotConnected, "TLS handshake with " + peer_ + " timed out");
    }
  }
}

std::size_t Connection::read_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    bool pending = false;
    {
      std::lock_guard lock(io_);
      if (closed_) throw Error(ErrorCode::NotConnected, "connection closed");
      pending = ssl_ && SSL_pending(ssl_) > 0;
    }
    if (!pending) {
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, remaining_ms(deadline));
      if (r < 0 && errno != EINTR) throw Error(ErrorCode::NotConnected, "poll failed");
      if (r == 0) return 0;
    }

    std::lock_guard lock(io_);
    if (closed_) throw Error(ErrorCode::NotConnected, "connection closed");
    if (ssl_) {
      ERR_clear_error();
      const int n = SSL_read(ssl_, buf.data(), static_cast<int>(buf.size()));
      if (n > 0) return static_cast<std::size_t>(n);
      const int err = SSL_get_error(ssl_, n);
      if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE) {
        if (Clock::now() >= deadline) return 0;
        continue;
      }
      throw Error(ErrorCode::NotConnected, "TLS connection to " + peer_ + " closed");
    }
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), MSG_DONTWAIT);
    if (n > 0) return static_cast<std::size_t>(n);
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      if (Clock::now() >= deadline) return 0;
      continue;
    }
    throw Error(ErrorCode::NotConnected, "connection to " + peer_ + " closed");
  }
}

void Connection::write_all(std::span<const std::uint8_t> data, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  std::lock_guard lock(io_);
  std::size_t off = 0;
  while (off < data.size()) {
    if (closed_) throw Error(ErrorCode::NotConnected, "connection closed");
    short wait_for = 0;
    if (ssl_) {
      ERR_clear_error();
      const int n = SSL_write(ssl_, data.data() + off, static_cast<int>(data.size() - off));
      if (n > 0) {
        off += static_cast<std::size_t>(n);
        continue;
      }
      const int err = SSL_get_error(ssl_, n);
      if (err == SSL_ERROR_WANT_WRITE) wait_for = POLLOUT;
      else if (err == SSL_ERROR_WANT_READ) wait_for = POLLIN;
      else throw Error(ErrorCode::NotConnected, "TLS write to " + peer_ + " failed");
    } else {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n > 0) {
        off += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) wait_for = POLLOUT;
      else throw Error(ErrorCode::NotConnected, "write to " + peer_ + " failed");
    }
    if (!wait_fd(fd_, wait_for, remaining_ms(deadline))) {
      throw Error(ErrorCode::NotConnected, "write to " + peer_ + " timed out");
    }
  }
}

void Connection::close() noexcept {
  std::lock_guard lock(io_);
  if (closed_) return;
  closed_ = true;
  ::shutdown(fd_, SHUT_RDWR);
}

// ---------------------------------------------------------------------------

Listener::Listener(const std::string& host, std::uint16_t port) {
  init();
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port_s = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port_s.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::ConfigError, "resolve listen address " + host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  if (fd_ < 0) throw Error(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, res->ai_addr, res->ai_addrlen) < 0 || ::listen(fd_, 64) < 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    throw Error(ErrorCode::IoError, "listen on " + host + ":" + port_s + ": " + why);
  }
  set_nonblocking(fd_);

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

Listener::~Listener() {
  close();
  ::close(fd_);
}

std::unique_ptr<Connection> Listener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r <= 0 || (p.revents & (POLLERR | POLLHUP | POLLNVAL))) return nullptr;
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  const int fd = ::accept4(fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
  if (fd < 0) return nullptr;
  char host[INET6_ADDRSTRLEN] = "?";
  std::uint16_t port = 0;
  if (addr.ss_family == AF_INET) {
    auto* in = reinterpret_cast<sockaddr_in*>(&addr);
    ::inet_ntop(AF_INET, &in->sin_addr, host, sizeof host);
    port = ntohs(in->sin_port);
  } else if (addr.ss_family == AF_INET6) {
    auto* in6 = reinterpret_cast<sockaddr_in6*>(&addr);
    ::inet_ntop(AF_INET6, &in6->sin6_addr, host, sizeof host);
    port = ntohs(in6->sin6_port);
  }
  return std::unique_ptr<Connection>(new Connection(fd, std::string(host) + ":" + std::to_string(port)));
}

void Listener::close() noexcept { ::shutdown(fd_, SHUT_RDWR); }

// ---------------------------------------------------------------------------

namespace {

using PKeyPtr = std::unique_ptr<EVP_PKEY, decltype(&EVP_PKEY_free)>;
using X509Ptr = std::unique_ptr<X509, decltype(&X509_free)>;

PKeyPtr make_key() {
  EVP_PKEY* key = EVP_EC_gen("P-256");
  if (!key) throw Error(ErrorCode::TlsError, "key generation failed: " + ssl_error_text());
  return PKeyPtr(key, EVP_PKEY_free);
}

void add_ext(X509* cert, X509* issuer, int nid, const char* value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
  if (!ext) throw Error(ErrorCode::TlsError, "bad certificate extension");
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

X509Ptr make_cert(EVP_PKEY* key, const char* cn, X509* issuer, EVP_PKEY* issuer_key, long serial, bool ca) {
  X509Ptr cert(X509_new(), X509_free);
  X509_set_version(cert.get(), 2);
  ASN1_INTEGER_set(X509_get_serialNumber(cert.get()), serial);
  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), 60L * 60 * 24 * 825);
  X509_set_pubkey(cert.get(), key);
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "O", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("lify dev"), -1, -1, 0);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(cn), -1, -1, 0);
  X509* signer = issuer ? issuer : cert.get();
  X509_set_issuer_name(cert.get(), X509_get_subject_name(signer));
  if (ca) {
    add_ext(cert.get(), signer, NID_basic_constraints, "critical,CA:TRUE");
    add_ext(cert.get(), signer, NID_key_usage, "critical,keyCertSign,cRLSign");
    add_ext(cert.get(), signer, NID_subject_key_identifier, "hash");
  } else {
    add_ext(cert.get(), signer, NID_basic_constraints, "critical,CA:FALSE");
    add_ext(cert.get(), signer, NID_key_usage, "critical,digitalSignature,keyEncipherment");
    add_ext(cert.get(), signer, NID_ext_key_usage, "serverAuth");
    add_ext(cert.get(), signer, NID_subject_alt_name, "DNS:localhost,IP:127.0.0.1,IP:::1");
  }
  if (X509_sign(cert.get(), issuer_key, EVP_sha256()) == 0) {
    throw Error(ErrorCode::TlsError, "certificate signing failed: " + ssl_error_text());
  }
  return cert;
}

void write_pem(const std::filesystem::path& path, auto&& writer) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const int ok = writer(f);
  std::fclose(f);
  if (!ok) throw Error(ErrorCode::TlsError, "PEM write failed for " + path.string());
}

}  // namespace

DevCertificates ensure_dev_certificates(const std::filesystem::path& dir) {
  init();
  DevCertificates out{dir / "ca.pem", dir / "ca.key", dir / "server.pem", dir / "server.key"};
  if (std::filesystem::exists(out.ca_cert) && std::filesystem::exists(out.server_cert) &&
      std::filesystem::exists(out.server_key)) {
    return out;
  }
  std::filesystem::create_directories(dir);

  auto ca_key = make_key();
  auto ca = make_cert(ca_key.get(), "lify dev CA", nullptr, ca_key.get(), 1, true);
  auto server_key = make_key();
  auto server = make_cert(server_key.get(), "localhost", ca.get(), ca_key.get(), 2, false);

  write_pem(out.ca_key, [&](FILE* f) {
    return PEM_write_PrivateKey(f, ca_key.get(), nullptr, nullptr, 0, nullptr, nullptr);
  });
  write_pem(out.ca_cert, [&](FILE* f) { return PEM_write_X509(f, ca.get()); });
  write_pem(out.server_key, [&](FILE* f) {
    return PEM_write_PrivateKey(f, server_key.get(), nullptr, nullptr, 0, nullptr, nullptr);
  });
  write_pem(out.server_cert, [&](FILE* f) { return PEM_write_X509(f, server.get()); });
  std::filesystem::permissions(out.ca_key, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
  std::filesystem::permissions(out.server_key,
                               std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
  return out;
}

}  // namespace lify::net
