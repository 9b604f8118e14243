#pragma once

// Fan-out of bus events to server-sent-event clients with a replay ring for
// Last-Event-ID resume.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lify/event_bus.hpp"

namespace lify {

struct StreamEvent {
  std::uint64_t id = 0;  // 0 for gap markers, which are not resumable
  std::string type;      // sample | alert | gap
  std::string patient_id;
  std::string data;      // JSON

  /// "id: ..\nevent: ..\ndata: ..\n\n"
  std::string wire() const;
};

class StreamHub {
 public:
  using Filter = std::function<bool(const std::string& patient_id)>;

  class Client {
   public:
    /// Waits up to `timeout` for events. Empty result with closed() set
    /// means the stream is over (hub shut down or the client fell behind).
    std::vector<StreamEvent> next(std::chrono::milliseconds timeout);
    bool closed() const;
    bool overflowed() const;

   private:
    friend class StreamHub;
    Filter filter_;
    std::size_t capacity_ = 0;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<StreamEvent> queue_;
    bool closed_ = false;
    bool overflowed_ = false;
  };

  explicit StreamHub(EventBus& bus, std::size_t replay_capacity = 1024, std::size_t client_queue = 256);
  ~StreamHub();

  /// Registers a client. With last_event_id, events after it still in the
  /// ring are queued first; if some were already evicted a gap event comes
  /// before them.
  std::shared_ptr<Client> open(Filter filter, std::optional<std::uint64_t> last_event_id = {});
  void close(const std::shared_ptr<Client>& c);
  void shutdown();

  std::size_t client_count() const;
  std::uint64_t last_id() const;

  /// Used by the bus handler; public for tests.
  void push(const BusEvent& e);

 private:
  static void deliver(Client& c, const StreamEvent& e);

  std::size_t replay_capacity_;
  std::size_t client_queue_;
  mutable std::mutex mu_;
  std::deque<StreamEvent> ring_;
  std::uint64_t last_id_ = 0;
  std::vector<std::shared_ptr<Client>> clients_;
  bool shut_ = false;
  EventBus::Subscription sub_;
};

}  // namespace lify
