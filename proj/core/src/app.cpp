#include "lify/app.hpp"

#include <spdlog/spdlog.h>

#include "lify/config_util.hpp"
#include "lify/error.hpp"
#include "lify/net.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;

StackConfig StackConfig::from_json(const nlohmann::json& j) {
  config::require_keys(j, {"data_root", "services", "broker", "gateway", "alerts", "notifier", "api", "agent"}, "config");
  StackConfig c;
  c.raw = j;
  if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
  if (j.contains("services")) {
    std::vector<std::string> names;
    config::read(j, "services", names, "config");
    std::string joined;
    for (const auto& n : names) joined += (joined.empty() ? "" : ",") + n;
    c.services = parse_services(joined);
  }
  if (j.contains("broker")) {
    const auto& b = j.at("broker");
    config::require_keys(b, {"listen", "tls", "cert", "key"}, "broker");
    config::read(b, "listen", c.broker.listen, "broker");
    config::read(b, "tls", c.broker.tls, "broker");
    if (b.contains("cert")) c.broker.cert = b.at("cert").get<std::string>();
    if (b.contains("key")) c.broker.key = b.at("key").get<std::string>();
  }
  if (j.contains("gateway")) c.gateway = GatewayConfig::from_json(j.at("gateway"));
  if (j.contains("alerts")) config::require_keys(j.at("alerts"), {}, "alerts");
  if (j.contains("notifier")) {
    const auto& n = j.at("notifier");
    config::require_keys(n, {"transport", "api_base", "mock_log", "queue", "max_retries"}, "notifier");
    config::read(n, "transport", c.notifier.transport, "notifier");
    config::read(n, "api_base", c.notifier.api_base, "notifier");
    if (n.contains("mock_log")) c.notifier.mock_log = n.at("mock_log").get<std::string>();
    config::read(n, "queue", c.notifier.queue, "notifier");
    config::read(n, "max_retries", c.notifier.max_retries, "notifier");
  }
  if (j.contains("api")) c.api = ApiConfig::from_json(j.at("api"));
  return c;
}

StackConfig StackConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::set<std::string> StackConfig::parse_services(const std::string& list) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string::npos) end = list.size();
    const auto name = list.substr(start, end - start);
    if (name == "all") {
      out.insert(kAllServices.begin(), kAllServices.end());
    } else if (!name.empty()) {
      if (!kAllServices.contains(name)) throw Error(ErrorCode::ConfigError, "unknown service '" + name + "'");
      out.insert(name);
    }
    start = end + 1;
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, "no services selected");
  return out;
}

void StackConfig::validate() const {
  if (data_root.empty()) throw Error(ErrorCode::ConfigError, "data_root must not be empty");
  if (broker.cert.empty() != broker.key.empty()) throw Error(ErrorCode::ConfigError, "broker.cert and broker.key go together");
  for (const auto& p : {broker.cert, broker.key}) {
    if (!p.empty() && !fs::exists(p)) throw Error(ErrorCode::ConfigError, "broker TLS file not found: " + p.string());
  }
  if (notifier.transport != "mock" && notifier.transport != "telegram") {
    throw Error(ErrorCode::ConfigError, "notifier.transport must be mock or telegram");
  }
  if (notifier.queue == 0) throw Error(ErrorCode::ConfigError, "notifier.queue must be positive");
  if (notifier.max_retries < 0) throw Error(ErrorCode::ConfigError, "notifier.max_retries must not be negative");
  if (has("api")) api.validate();
  // A gateway using the embedded broker gets its URL and CA at start.
  if (has("gateway") && !has("broker")) gateway.validate();
}

Stack::Stack(StackConfig config) : config_(std::move(config)) {}

Stack::~Stack() { stop(); }

void Stack::start() {
  if (running_) return;
  net::init();
  config_.validate();
  const auto& root = config_.data_root;
  fs::create_directories(root);

  try {
    storage_ = open_storage(config_.gateway.data_root.empty() ? root / "telemetry" : config_.gateway.data_root);
    gateway_ = std::make_unique<Gateway>(*storage_, &bus_, SystemClock::instance(), config_.gateway.dedup_capacity,
                                         config_.gateway.future_window_ms);
    alerts_ = std::make_unique<AlertEngine>(config_.has("alerts") ? bus_ : detached_bus_, root);
    accounts_ = std::make_unique<AccountStore>(root, SystemClock::instance(), config_.kdf);
    patients_ = std::make_unique<PatientStore>(root);
    bindings_ = std::make_unique<BindingStore>(root);
    directory_ = std::make_unique<AccountDirectory>(*accounts_, *patients_);

    if (config_.has("broker")) {
      mqtt::BrokerOptions opts;
      const auto [host, port] = net::parse_host_port(config_.broker.listen, config_.broker.tls ? 8883 : 1883);
      opts.host = host;
      opts.port = port;
      opts.tls = config_.broker.tls;
      if (opts.tls) {
        if (config_.broker.cert.empty()) {
          const auto certs = net::ensure_dev_certificates(root / "certs");
          opts.cert_path = certs.server_cert;
          opts.key_path = certs.server_key;
          broker_ca_ = certs.ca_cert;
        } else {
          opts.cert_path = config_.broker.cert;
          opts.key_path = config_.broker.key;
          broker_ca_ = config_.gateway.ca_path;
        }
      }
      broker_ = std::make_unique<mqtt::Broker>(opts);
      broker_->start();
      spdlog::info("broker: listening on {}", broker_url());
    }

    if (config_.has("gateway")) {
      auto gc = config_.gateway;
      if (broker_) {
        gc.broker_url = broker_url();
        if (gc.ca_path.empty()) gc.ca_path = broker_ca_;
      }
      gateway_service_ = std::make_unique<GatewayService>(gc, *gateway_);
      gateway_service_->start();
    }

    if (config_.has("notifier")) {
      if (config_.notifier.transport == "telegram") {
        transport_ = std::make_unique<TelegramTransport>(TelegramTransport::from_env(config_.notifier.api_base));
      } else {
        auto log = config_.notifier.mock_log.empty() ? root / "notifier-mock.ndjson" : config_.notifier.mock_log;
        auto mock = std::make_unique<MockTransport>(SystemClock::instance(), log);
        mock_ = mock.get();
        transport_ = std::move(mock);
      }
      RetryPolicy policy;
      policy.max_retries = config_.notifier.max_retries;
      notifier_ = std::make_unique<Notifier>(*transport_, *bindings_, *directory_, SystemClock::instance(), root,
                                             config_.notifier.queue, policy);
      notifier_->attach(bus_);
      notifier_->start();
    }

    if (config_.has("api")) {
      api_ = std::make_unique<ApiServer>(config_.api, ApiDeps{*accounts_, *patients_, *gateway_, *alerts_, *bindings_,
                                                               bus_, SystemClock::instance()});
      api_->start();
    }
  } catch (...) {
    running_ = true;
    stop();
    throw;
  }
  running_ = true;
}

void Stack::stop() {
  if (!running_) return;
  running_ = false;
  if (api_) api_->stop();
  if (gateway_service_) gateway_service_->stop();
  if (broker_) broker_->stop();
  if (notifier_) notifier_->stop();
  if (storage_) storage_->flush();
  api_.reset();
  gateway_service_.reset();
  notifier_.reset();
  broker_.reset();
}

std::string Stack::broker_url() const {
  if (!broker_) return {};
  return std::string(config_.broker.tls ? "mqtts://" : "mqtt://") + broker_->endpoint().host + ":" +
         std::to_string(broker_->port());
}

std::string Stack::fatal_error() const { return gateway_service_ ? gateway_service_->fatal_error() : std::string(); }

fs::path Stack::broker_ca() const { return broker_ca_; }

nlohmann::json Stack::describe() const {
  nlohmann::json j;
  j["event"] = "ready";
  j["services"] = config_.services;
  j["data_root"] = config_.data_root.string();
  if (broker_) {
    j["broker"] = broker_url();
    if (!broker_ca_.empty()) j["broker_ca"] = broker_ca_.string();
  }
  if (api_) j["api"] = api_->base_url();
  return j;
}

}  // namespace lify
