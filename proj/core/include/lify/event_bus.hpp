#pragma once

// In-process fan-out between the gateway, the alert engine, the notifier and
// the API stream. publish() calls every handler synchronously on the
// publishing thread, so handlers must not block: anything slow belongs on a
// queue owned by the subscriber.

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/alert_model.hpp"
#include "lify/vitals.hpp"

namespace lify {

struct SampleEvent {
  VitalSample sample;
  bool operator==(const SampleEvent&) const = default;
};

struct AlertEvent {
  enum class Kind { Created, Acked };
  Kind kind = Kind::Created;
  Alert alert;
  bool operator==(const AlertEvent&) const = default;
};

using BusEvent = std::variant<SampleEvent, AlertEvent>;

/// {"type":"sample",...} or {"type":"alert","kind":"created"|"acked","alert":{...}}
nlohmann::ordered_json event_to_json(const BusEvent& e);
BusEvent event_from_json(const nlohmann::json& j);
nlohmann::ordered_json sample_to_json(const VitalSample& s);

class EventBus {
 public:
  using Handler = std::function<void(const BusEvent&)>;

  /// Unsubscribes on destruction.
  class Subscription {
   public:
    Subscription() = default;
    Subscription(Subscription&&) noexcept = default;
    Subscription& operator=(Subscription&&) noexcept = default;
    ~Subscription() = default;
    void reset() { token_.reset(); }

   private:
    friend class EventBus;
    explicit Subscription(std::shared_ptr<void> token) : token_(std::move(token)) {}
    std::shared_ptr<void> token_;
  };

  EventBus();
  [[nodiscard]] Subscription subscribe(Handler handler);
  /// Handler exceptions are logged and swallowed so one subscriber cannot
  /// starve the others.
  void publish(const BusEvent& event);
  std::size_t subscriber_count() const;

 private:
  // Destroying a Subscription waits for calls in flight on other threads,
  // so its handler is never running once the destructor returns.
  struct Entry {
    std::mutex mu;
    std::condition_variable cv;
    bool alive = true;
    std::vector<std::thread::id> callers;
    Handler handler;
  };
  struct State {
    std::mutex mu;
    std::uint64_t next_id = 0;
    std::map<std::uint64_t, std::shared_ptr<Entry>> handlers;
  };
  std::shared_ptr<State> state_;
};

}  // namespace lify
