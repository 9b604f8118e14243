#pragma once

// HTTP/1.1 JSON API under /api/v1 plus the text/event-stream live feed.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "lify/accounts.hpp"
#include "lify/alert_engine.hpp"
#include "lify/clock.hpp"
#include "lify/event_bus.hpp"
#include "lify/gateway.hpp"
#include "lify/notifier.hpp"
#include "lify/patients.hpp"
#include "lify/stream_hub.hpp"

namespace httplib {
class Server;
}

namespace lify {

struct ApiConfig {
  std::string listen = "127.0.0.1:8080";  // port 0 picks a free one
  std::filesystem::path tls_cert;
  std::filesystem::path tls_key;
  bool tls_required = false;  // production profile: refuse to serve plain HTTP
  std::filesystem::path static_dir;  // dashboard bundle served at /
  std::size_t stream_queue = 256;
  std::size_t stream_replay = 1024;
  std::int64_t heartbeat_ms = 15'000;
  int threads = 32;

  static ApiConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct ApiDeps {
  AccountStore& accounts;
  PatientStore& patients;
  Gateway& gateway;
  AlertEngine& alerts;
  BindingStore& bindings;
  EventBus& bus;
  Clock& clock;
};

/// Serves RecipientDirectory for the notifier from accounts and patients.
class AccountDirectory final : public RecipientDirectory {
 public:
  AccountDirectory(const AccountStore& accounts, const PatientStore& patients)
      : accounts_(accounts), patients_(patients) {}
  std::vector<std::string> recipients(const std::string& patient_id) const override;
  std::string patient_name(const std::string& patient_id) const override;

 private:
  const AccountStore& accounts_;
  const PatientStore& patients_;
};

class ApiServer {
 public:
  ApiServer(ApiConfig config, ApiDeps deps);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and starts serving on a background thread.
  /// Throws Error(ConfigError) when the address cannot be bound.
  void start();
  void stop();
  int port() const noexcept { return port_; }
  std::string base_url() const;
  StreamHub& hub() noexcept { return hub_; }

 private:
  void routes();

  ApiConfig config_;
  ApiDeps deps_;
  StreamHub hub_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
};

}  // namespace lify
