#include "lify/gateway.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>

#include "lify/backoff.hpp"
#include "lify/config_util.hpp"
#include "lify/envelope.hpp"
#include "lify/error.hpp"

namespace lify {

using namespace std::chrono_literals;

namespace {

std::uint64_t dedup_key(std::int64_t ts_ms, MetricKind m) {
  return (static_cast<std::uint64_t>(ts_ms) << 2) | static_cast<std::uint64_t>(m);
}

}  // namespace

void Gateway::Lru::insert(std::uint64_t key) {
  if (capacity_ == 0) return;
  if (auto it = where_.find(key); it != where_.end()) {
    order_.splice(order_.begin(), order_, it->second);
    return;
  }
  order_.push_front(key);
  where_[key] = order_.begin();
  if (order_.size() > capacity_) {
    where_.erase(order_.back());
    order_.pop_back();
  }
}

Gateway::Gateway(Storage& storage, EventBus* bus, Clock& clock, std::size_t dedup_capacity,
                 std::int64_t future_window_ms)
    : storage_(storage),
      bus_(bus),
      clock_(clock),
      dedup_capacity_(dedup_capacity),
      future_window_ms_(future_window_ms) {}

Gateway::DeviceState& Gateway::device(const std::string& device_id) {
  std::lock_guard lock(devices_mu_);
  auto& slot = devices_[device_id];
  if (!slot) slot = std::make_unique<DeviceState>(dedup_capacity_);
  return *slot;
}

IngestResult Gateway::finish(IngestResult r, const std::string& device_id, std::int64_t ts_ms) {
  std::lock_guard lock(stats_mu_);
  ++stats_.received;
  switch (r.outcome) {
    case IngestOutcome::Accepted: ++stats_.accepted; break;
    case IngestOutcome::Duplicate: ++stats_.duplicates; break;
    case IngestOutcome::Rejected:
      ++stats_.rejected;
      ++stats_.rejected_by_reason[r.reason];
      break;
  }
  if (!device_id.empty()) {
    auto& last = stats_.last_ts[device_id];
    last = std::max(last, ts_ms);
  }
  return r;
}

IngestResult Gateway::on_message(std::string_view topic, std::string_view payload) {
  TelemetryEnvelope env;
  try {
    env = parse_envelope(payload);
  } catch (const Error& e) {
    std::string reason = "schema";
    if (e.code() == ErrorCode::ProtocolError) reason = "bad_json";
    else if (std::string_view(e.what()).starts_with("unknown_metric")) reason = "unknown_metric";
    spdlog::debug("gateway: rejected message on {}: {}", topic, e.what());
    return finish({IngestOutcome::Rejected, reason, 0});
  }
  if (env.ts_ms > clock_.now_ms() + future_window_ms_) {
    spdlog::warn("gateway: {} sent ts_ms={} more than {} ms ahead", env.device_id, env.ts_ms, future_window_ms_);
    return finish({IngestOutcome::Rejected, "future_ts", 0});
  }
  if (topic != telemetry_topic(env.device_id)) {
    spdlog::warn("gateway: envelope for device {} arrived on topic {}", env.device_id, topic);
    return finish({IngestOutcome::Rejected, "topic_mismatch", 0});
  }

  auto& dev = device(env.device_id);
  std::lock_guard device_lock(dev.mu);
  std::vector<StoredRecord> fresh;
  for (const auto& s : samples_of(env)) {
    const auto key = dedup_key(s.ts_ms, s.metric);
    if (dev.seen.contains(key)) continue;
    if (storage_.contains(s.device_id, s.ts_ms, s.metric)) {
      dev.seen.insert(key);
      continue;
    }
    fresh.push_back(StoredRecord{s.patient_id, s.metric, s.ts_ms, s.value, s.quality, s.device_id});
  }
  const bool had_values = !env.metrics.empty();
  if (had_values && fresh.empty()) return finish({IngestOutcome::Duplicate, {}, 0}, env.device_id, env.ts_ms);

  const std::size_t stored = fresh.empty() ? 0 : storage_.append(fresh);
  for (const auto& r : fresh) dev.seen.insert(dedup_key(r.ts_ms, r.metric));
  if (bus_) {
    for (const auto& r : fresh) {
      bus_->publish(SampleEvent{VitalSample{r.patient_id, r.device_id, r.metric, r.value, r.ts_ms, r.quality}});
    }
  }
  return finish({IngestOutcome::Accepted, {}, stored}, env.device_id, env.ts_ms);
}

std::vector<StoredRecord> Gateway::query_range(const std::string& patient_id, MetricKind metric, std::int64_t from_ms,
                                               std::int64_t to_ms, std::size_t max_points) const {
  if (from_ms > to_ms) throw Error(ErrorCode::ValidationError, "from must not be after to");
  if (max_points < 1 || max_points > kMaxQueryPoints) {
    throw Error(ErrorCode::ValidationError, "max_points must be within [1, 100000]");
  }
  auto records = storage_.range(patient_id, metric, from_ms, to_ms);
  const std::size_t n = records.size();
  if (n <= max_points) return records;

  std::vector<StoredRecord> out;
  out.reserve(max_points);
  for (std::size_t i = 0; i < max_points; ++i) {
    const std::size_t lo = i * n / max_points;
    const std::size_t hi = (i + 1) * n / max_points;
    StoredRecord b = records[lo];
    double sum = 0.0;
    __int128 ts_sum = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      sum += records[k].value;
      ts_sum += records[k].ts_ms;
      b.quality = std::max(b.quality, records[k].quality);
    }
    const auto count = static_cast<std::int64_t>(hi - lo);
    b.value = sum / static_cast<double>(count);
    b.ts_ms = static_cast<std::int64_t>(ts_sum / count);
    out.push_back(std::move(b));
  }
  return out;
}

std::map<MetricKind, StoredRecord> Gateway::latest(const std::string& patient_id) const {
  std::map<MetricKind, StoredRecord> out;
  for (const auto m : kAllMetrics) {
    if (auto r = storage_.latest(patient_id, m)) out.emplace(m, std::move(*r));
  }
  return out;
}

IngestStats Gateway::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

// ---------------------------------------------------------------------------

GatewayConfig GatewayConfig::from_json(const nlohmann::json& j) {
  static constexpr std::string_view kSection = "gateway";
  config::require_keys(j, {"broker_url", "tls_required", "ca", "client_id", "data_root", "dedup_capacity", "future_window"},
                       kSection);
  GatewayConfig c;
  config::read(j, "broker_url", c.broker_url, kSection);
  config::read(j, "tls_required", c.tls_required, kSection);
  if (j.contains("ca")) c.ca_path = j.at("ca").get<std::string>();
  config::read(j, "client_id", c.client_id, kSection);
  if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
  config::read(j, "dedup_capacity", c.dedup_capacity, kSection);
  if (j.contains("future_window")) c.future_window_ms = config::duration_ms(j.at("future_window"), "gateway.future_window");
  return c;
}

void GatewayConfig::apply_env() {
  if (const char* url = std::getenv("LIFY_BROKER_URL"); url && *url) broker_url = url;
}

void GatewayConfig::validate() const {
  const auto ep = net::parse_broker_url(broker_url);
  if (tls_required && !ep.tls) {
    throw Error(ErrorCode::ConfigError, "refusing plaintext broker " + ep.to_string() + " while tls_required is set");
  }
  if (ep.tls && !std::filesystem::exists(ca_path)) {
    throw Error(ErrorCode::ConfigError, "CA file not found: " + ca_path.string());
  }
  if (client_id.empty()) throw Error(ErrorCode::ConfigError, "gateway client_id must not be empty");
}

GatewayService::GatewayService(GatewayConfig config, Gateway& gateway) : config_(std::move(config)), gateway_(gateway) {}

GatewayService::~GatewayService() { stop(); }

bool GatewayService::connected() const { return client_ && client_->connected(); }

std::string GatewayService::fatal_error() const {
  std::lock_guard lock(mu_);
  return fatal_;
}

bool GatewayService::attempt() {
  try {
    {
      std::lock_guard lock(mu_);
      lost_ = false;
    }
    client_->connect();
    client_->subscribe({{std::string(kTelemetryTopicPrefix) + "+", 1}});
    spdlog::info("gateway: subscribed at {} (session {})", config_.broker_url,
                 client_->session_present() ? "resumed" : "new");
    return true;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TlsError || e.code() == ErrorCode::ConfigError) throw;
    spdlog::warn("gateway: broker unavailable: {}", e.what());
    client_->disconnect();
    return false;
  }
}

void GatewayService::start() {
  config_.validate();
  mqtt::ClientOptions o;
  o.endpoint = net::parse_broker_url(config_.broker_url);
  o.ca_path = config_.ca_path;
  o.tls_required = config_.tls_required;
  o.client_id = config_.client_id;
  o.clean_session = false;
  client_ = std::make_unique<mqtt::Client>(o);
  client_->set_message_handler([this](const mqtt::Publish& p) {
    const auto r = gateway_.on_message(p.topic, p.payload);
    if (r.outcome == IngestOutcome::Rejected) spdlog::info("gateway: rejected message on {} ({})", p.topic, r.reason);
  });
  client_->set_connection_lost_handler([this](const std::string& reason) {
    spdlog::warn("gateway: connection lost: {}", reason);
    std::lock_guard lock(mu_);
    lost_ = true;
    cv_.notify_all();
  });
  {
    std::lock_guard lock(mu_);
    stopping_ = false;
  }
  const bool up = attempt();
  {
    std::lock_guard lock(mu_);
    lost_ = !up;
  }
  thread_ = std::thread([this] { loop(); });
}

void GatewayService::loop() {
  Backoff backoff(500ms, 30s, 0.2);
  for (;;) {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || lost_; });
      if (stopping_) return;
    }
    client_->disconnect();
    const auto delay = backoff.next();
    spdlog::info("gateway: reconnecting in {} ms", delay.count());
    {
      std::unique_lock lock(mu_);
      if (cv_.wait_for(lock, delay, [&] { return stopping_; })) return;
    }
    try {
      if (attempt()) backoff.reset();
      else {
        std::lock_guard lock(mu_);
        lost_ = true;
      }
    } catch (const Error& e) {
      spdlog::critical("gateway: {}", e.what());
      std::lock_guard lock(mu_);
      fatal_ = e.what();
      return;
    }
  }
}

void GatewayService::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    cv_.notify_all();
  }
  if (thread_.joinable()) thread_.join();
  if (client_) client_->disconnect();
}

}  // namespace lify
