#pragma once

// One process hosting the embedded broker, gateway, alert engine, notifier
// and API, wired over an in-process event bus. The CLI's `serve` command and
// the end-to-end tests both run this.
//
// Config file layout (every section optional):
//   {"data_root": "...",
//    "services": ["broker", "gateway", "alerts", "notifier", "api"],
//    "broker":   {"listen": "127.0.0.1:8883", "tls": true, "cert": "...", "key": "..."},
//    "gateway":  GatewayConfig keys,
//    "alerts":   {},
//    "notifier": {"transport": "mock"|"telegram", "api_base": "...", "mock_log": "...",
//                 "queue": 256, "max_retries": 5},
//    "api":      ApiConfig keys,
//    "agent":    AgentConfig keys (read by `simulate`)}

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "lify/accounts.hpp"
#include "lify/agent.hpp"
#include "lify/alert_engine.hpp"
#include "lify/api.hpp"
#include "lify/event_bus.hpp"
#include "lify/gateway.hpp"
#include "lify/mqtt/broker.hpp"
#include "lify/notifier.hpp"
#include "lify/patients.hpp"
#include "lify/storage.hpp"

namespace lify {

struct BrokerSection {
  std::string listen = "127.0.0.1:8883";
  bool tls = true;
  /// Both empty: a development CA and server certificate are generated
  /// under {data_root}/certs.
  std::filesystem::path cert;
  std::filesystem::path key;
};

struct NotifierSection {
  std::string transport = "mock";
  std::string api_base = "https://api.telegram.org";
  /// Mock transport only; defaults to {data_root}/notifier-mock.ndjson.
  std::filesystem::path mock_log;
  std::size_t queue = 256;
  int max_retries = 5;
};

inline const std::set<std::string> kAllServices = {"broker", "gateway", "alerts", "notifier", "api"};

struct StackConfig {
  std::filesystem::path data_root = "lify-data";
  std::set<std::string> services = kAllServices;
  BrokerSection broker;
  GatewayConfig gateway;
  NotifierSection notifier;
  ApiConfig api;
  /// Argon2id cost; tests lower it.
  KdfCost kdf = KdfCost::interactive();
  /// The raw document, so other commands can read their own sections.
  nlohmann::json raw = nlohmann::json::object();

  static StackConfig from_json(const nlohmann::json& j);
  /// Throws Error(ConfigError) naming the path when the file is missing or
  /// not valid JSON.
  static StackConfig load(const std::filesystem::path& path);
  /// "gateway,api" style subset; throws ConfigError for unknown names.
  static std::set<std::string> parse_services(const std::string& list);
  bool has(const std::string& service) const { return services.contains(service); }
  void validate() const;
};

class Stack {
 public:
  explicit Stack(StackConfig config);
  ~Stack();
  Stack(const Stack&) = delete;
  Stack& operator=(const Stack&) = delete;

  /// Throws Error(ConfigError) for config faults, leaving nothing running.
  void start();
  void stop();

  const StackConfig& config() const noexcept { return config_; }
  EventBus& bus() noexcept { return bus_; }
  Gateway& gateway() noexcept { return *gateway_; }
  AlertEngine& alerts() noexcept { return *alerts_; }
  AccountStore& accounts() noexcept { return *accounts_; }
  PatientStore& patients() noexcept { return *patients_; }
  BindingStore& bindings() noexcept { return *bindings_; }
  /// Null unless the mock transport is configured.
  MockTransport* mock() noexcept { return mock_; }
  Notifier* notifier() noexcept { return notifier_.get(); }
  mqtt::Broker* broker() noexcept { return broker_.get(); }
  ApiServer* api() noexcept { return api_.get(); }

  /// mqtts://host:port of the embedded broker, empty when not hosted here.
  std::string broker_url() const;
  /// CA that clients should trust for the embedded broker.
  std::filesystem::path broker_ca() const;
  /// Non-empty once a service stopped on an unrecoverable error.
  std::string fatal_error() const;
  /// One JSON line describing the running endpoints.
  nlohmann::json describe() const;

 private:
  StackConfig config_;
  EventBus bus_;
  EventBus detached_bus_;  // alert engine runs here when "alerts" is off
  std::unique_ptr<Storage> storage_;
  std::unique_ptr<Gateway> gateway_;
  std::unique_ptr<AlertEngine> alerts_;
  std::unique_ptr<AccountStore> accounts_;
  std::unique_ptr<PatientStore> patients_;
  std::unique_ptr<BindingStore> bindings_;
  std::unique_ptr<AccountDirectory> directory_;
  std::unique_ptr<ChatTransport> transport_;
  MockTransport* mock_ = nullptr;
  std::unique_ptr<Notifier> notifier_;
  std::unique_ptr<mqtt::Broker> broker_;
  std::filesystem::path broker_ca_;
  std::unique_ptr<GatewayService> gateway_service_;
  std::unique_ptr<ApiServer> api_;
  bool running_ = false;
};

}  // namespace lify
