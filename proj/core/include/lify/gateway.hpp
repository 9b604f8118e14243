#pragma once

// Telemetry ingestion: validate, deduplicate, persist, fan out; plus the
// range/latest queries behind the API.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/clock.hpp"
#include "lify/event_bus.hpp"
#include "lify/mqtt/client.hpp"
#include "lify/storage.hpp"

namespace lify {

enum class IngestOutcome { Accepted, Duplicate, Rejected };

struct IngestResult {
  IngestOutcome outcome = IngestOutcome::Rejected;
  /// bad_json | schema | unknown_metric | future_ts | topic_mismatch
  std::string reason;
  std::size_t stored = 0;
};

struct IngestStats {
  std::uint64_t received = 0;
  std::uint64_t accepted = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t rejected = 0;
  std::map<std::string, std::uint64_t> rejected_by_reason;
  std::map<std::string, std::int64_t> last_ts;  // per device
};

inline constexpr std::size_t kMaxQueryPoints = 100'000;
inline constexpr std::int64_t kFutureWindowMs = 24LL * 3600 * 1000;

class Gateway {
 public:
  /// `bus` may be null when nothing consumes accepted samples.
  Gateway(Storage& storage, EventBus* bus, Clock& clock = SystemClock::instance(),
          std::size_t dedup_capacity = 86'400, std::int64_t future_window_ms = kFutureWindowMs);

  /// Total over arbitrary input: data problems become Rejected outcomes.
  /// Storage failures propagate so the broker redelivers the message.
  IngestResult on_message(std::string_view topic, std::string_view payload);

  /// Ascending records in [from_ms, to_ms). More than max_points records
  /// are reduced to max_points bucket means: bucket i holds records
  /// [floor(i*n/max_points), floor((i+1)*n/max_points)); its value and ts
  /// are means (ts floored), its quality the worst member's.
  /// Throws Error(ValidationError) for from_ms > to_ms or max_points
  /// outside [1, 100000].
  std::vector<StoredRecord> query_range(const std::string& patient_id, MetricKind metric, std::int64_t from_ms,
                                        std::int64_t to_ms, std::size_t max_points) const;

  std::map<MetricKind, StoredRecord> latest(const std::string& patient_id) const;
  IngestStats stats() const;
  Storage& storage() noexcept { return storage_; }

 private:
  /// Recently seen (ts_ms, metric) keys of one device.
  class Lru {
   public:
    explicit Lru(std::size_t capacity) : capacity_(capacity) {}
    bool contains(std::uint64_t key) const { return where_.contains(key); }
    void insert(std::uint64_t key);

   private:
    std::size_t capacity_;
    std::list<std::uint64_t> order_;
    std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> where_;
  };
  struct DeviceState {
    std::mutex mu;  // serializes ingestion per device
    Lru seen;
    explicit DeviceState(std::size_t capacity) : seen(capacity) {}
  };

  DeviceState& device(const std::string& device_id);
  IngestResult finish(IngestResult r, const std::string& device_id = {}, std::int64_t ts_ms = 0);

  Storage& storage_;
  EventBus* bus_;
  Clock& clock_;
  std::size_t dedup_capacity_;
  std::int64_t future_window_ms_;

  std::mutex devices_mu_;
  std::map<std::string, std::unique_ptr<DeviceState>> devices_;
  mutable std::mutex stats_mu_;
  IngestStats stats_;
};

struct GatewayConfig {
  std::string broker_url = "mqtts://127.0.0.1:8883";
  bool tls_required = true;
  std::filesystem::path ca_path;
  std::string client_id = "lify-gateway";
  std::filesystem::path data_root;  // empty = in-memory
  std::size_t dedup_capacity = 86'400;
  std::int64_t future_window_ms = kFutureWindowMs;

  static GatewayConfig from_json(const nlohmann::json& j);
  void apply_env();  // LIFY_BROKER_URL
  void validate() const;
};

/// Keeps a persistent MQTT session subscribed to lify/v1/telemetry/+ and
/// feeds every message to the Gateway, reconnecting with exponential backoff
/// (0.5 s base, 30 s cap, jitter). Messages are acknowledged only after
/// on_message returns, so a crash between delivery and storage leads to
/// redelivery rather than loss.
class GatewayService {
 public:
  GatewayService(GatewayConfig config, Gateway& gateway);
  ~GatewayService();

  /// Validates the config and makes the first connection attempt inline:
  /// config and TLS trust failures throw, an unreachable broker does not.
  void start();
  void stop();
  bool connected() const;
  /// Non-empty once a later TLS trust failure stopped the service.
  std::string fatal_error() const;

 private:
  bool attempt();  // connect + subscribe; false on a transient failure
  void loop();

  GatewayConfig config_;
  Gateway& gateway_;
  std::unique_ptr<mqtt::Client> client_;
  std::thread thread_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  bool lost_ = false;
  std::string fatal_;
};

}  // namespace lify
