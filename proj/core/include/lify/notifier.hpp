#pragma once

// Alert delivery to caregivers' chats over the Telegram Bot protocol.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/alert_model.hpp"
#include "lify/clock.hpp"
#include "lify/event_bus.hpp"

namespace lify {

/// Outcome of one sendMessage call. status 0 means no HTTP response at all
/// (timeout, refused connection).
struct SendResult {
  int status = 0;
  bool ok = false;  // the response body carried ok=true
  std::optional<std::int64_t> retry_after_s;
};

/// The "chat send" port.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual SendResult send(const std::string& chat_id, const std::string& text) = 0;
};

/// HTTPS POST {api_base}/bot{token}/sendMessage with a JSON body.
class TelegramTransport final : public ChatTransport {
 public:
  /// Throws Error(ConfigError) for an empty token or unusable api_base.
  TelegramTransport(std::string api_base, std::string token,
                    std::chrono::milliseconds timeout = std::chrono::seconds(10));
  /// Reads the token from LIFY_BOT_TOKEN.
  static TelegramTransport from_env(std::string api_base);

  SendResult send(const std::string& chat_id, const std::string& text) override;

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string token_;
  std::chrono::milliseconds timeout_;
};

/// Scripted transport: per-chat queues of canned results, then a default.
/// Every call is recorded, optionally also as a line in an ndjson log.
class MockTransport final : public ChatTransport {
 public:
  struct Sent {
    std::string chat_id;
    std::string text;
    std::int64_t ts_ms = 0;
  };

  explicit MockTransport(Clock& clock = SystemClock::instance(), std::filesystem::path log_path = {});

  void script(const std::string& chat_id, std::vector<SendResult> results);
  void set_default(SendResult r);
  SendResult send(const std::string& chat_id, const std::string& text) override;

  std::vector<Sent> sent() const;
  std::vector<Sent> sent_to(const std::string& chat_id) const;
  void clear();

  static SendResult ok() { return {200, true, {}}; }
  static SendResult status(int code, std::optional<std::int64_t> retry_after_s = {}) {
    return {code, code == 200, retry_after_s};
  }

 private:
  Clock& clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::deque<SendResult>> scripts_;
  SendResult default_ = ok();
  std::vector<Sent> sent_;
  std::ofstream log_;
};

// ---------------------------------------------------------------------------

struct ChatBinding {
  std::string user_id;
  std::string chat_id;
  bool verified = false;

  bool operator==(const ChatBinding&) const = default;
};

struct BindCode {
  std::string code;  // six digits
  std::int64_t expires_ts_ms = 0;
};

inline constexpr std::int64_t kBindCodeTtlMs = 15 * 60 * 1000;

/// One binding per user. Codes live in memory only; verified bindings are
/// persisted to {data_root}/bindings.json.
class BindingStore {
 public:
  explicit BindingStore(std::filesystem::path data_root = {}, Clock& clock = SystemClock::instance());

  /// Issues a fresh single-use code, invalidating any earlier one. With a
  /// chat_id the user gets an unverified binding until the code is redeemed
  /// (an existing verified binding keeps receiving messages meanwhile).
  BindCode issue_code(const std::string& user_id, const std::optional<std::string>& chat_id = {});

  /// Throws Error(BadCode) without a matching outstanding code and
  /// Error(Expired) once the code is 15 minutes old.
  ChatBinding bind_chat(const std::string& user_id, const std::string& chat_id, const std::string& code);

  /// The verified binding if any, else the pending unverified one.
  std::optional<ChatBinding> binding(const std::string& user_id) const;
  void unbind(const std::string& user_id);

  /// Test hook: install a binding state directly.
  void put(const ChatBinding& b);

 private:
  void save() const;

  std::filesystem::path root_;
  Clock& clock_;
  mutable std::mutex mu_;
  std::map<std::string, ChatBinding> verified_;
  std::map<std::string, ChatBinding> pending_;
  std::map<std::string, BindCode> codes_;
};

/// Who may be told about a patient: accounts linked to it with
/// notifications switched on, plus the patient's display name.
class RecipientDirectory {
 public:
  virtual ~RecipientDirectory() = default;
  virtual std::vector<std::string> recipients(const std::string& patient_id) const = 0;
  virtual std::string patient_name(const std::string& patient_id) const = 0;
};

/// Fixed directory for tests and the demo scenario.
class StaticDirectory final : public RecipientDirectory {
 public:
  void add(const std::string& patient_id, const std::string& name, std::vector<std::string> users);
  std::vector<std::string> recipients(const std::string& patient_id) const override;
  std::string patient_name(const std::string& patient_id) const override;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::pair<std::string, std::vector<std::string>>> patients_;
};

// ---------------------------------------------------------------------------

enum class DeliveryOutcome { Delivered, GaveUp };

struct DeliveryReceipt {
  std::string alert_id;
  std::string chat_id;
  std::string user_id;
  int attempts = 0;
  DeliveryOutcome outcome = DeliveryOutcome::GaveUp;
  std::string reason;  // GaveUp only: forbidden, server_error, timeout, ...
  std::int64_t last_attempt_ts_ms = 0;

  bool operator==(const DeliveryReceipt&) const = default;
};

nlohmann::ordered_json receipt_to_json(const DeliveryReceipt& r);
DeliveryReceipt receipt_from_json(const nlohmann::json& j);

inline constexpr std::size_t kMaxChatMessageChars = 4096;

/// "Ana Pereira" -> "Ana P."; single names pass through.
std::string short_name(const std::string& full_name);

/// Plain text, one line, at most 4096 code points.
std::string format_alert_message(const Alert& a, const std::string& patient_name);

struct RetryPolicy {
  int max_retries = 5;
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{16000};

  /// Delay before retry number `retry` (1-based) given the previous delay
  /// and a server-requested wait. Never shorter than `previous`, never
  /// longer than cap.
  std::chrono::milliseconds delay(int retry, std::chrono::milliseconds previous,
                                  std::optional<std::int64_t> retry_after_s) const;
};

struct NotifierStats {
  std::uint64_t enqueued = 0;
  std::uint64_t dropped = 0;
  std::uint64_t delivered = 0;
  std::uint64_t gave_up = 0;
  std::uint64_t skipped_unverified = 0;
  std::uint64_t skipped_already_delivered = 0;
};

/// Owns a bounded alert queue drained by one dispatcher thread, so a slow
/// chat service never blocks whoever publishes alerts. Receipts are appended
/// to {data_root}/receipts.ndjson; a (alert, chat) pair with a Delivered
/// receipt is never sent again, also after a restart.
class Notifier {
 public:
  Notifier(ChatTransport& transport, BindingStore& bindings, const RecipientDirectory& directory,
           Clock& clock = SystemClock::instance(), std::filesystem::path data_root = {},
           std::size_t queue_capacity = 256, RetryPolicy policy = {});
  ~Notifier();

  /// Forwards every created alert from the bus into the queue.
  void attach(EventBus& bus);
  void start();
  void stop();

  /// False when the oldest queued alert had to be dropped to make room.
  bool enqueue(const Alert& a);

  /// Synchronous delivery to all current recipients; what the dispatcher runs.
  std::vector<DeliveryReceipt> dispatch(const Alert& a);

  /// Blocks until the queue is empty and nothing is in flight.
  bool wait_idle(std::chrono::milliseconds timeout) const;

  std::vector<DeliveryReceipt> receipts() const;
  NotifierStats stats() const;

 private:
  DeliveryReceipt deliver(const Alert& a, const std::string& user_id, const std::string& chat_id,
                          const std::string& text);
  bool pause(std::chrono::milliseconds d);  // false when stopping
  void record(const DeliveryReceipt& r);
  void load();
  void run();

  ChatTransport& transport_;
  BindingStore& bindings_;
  const RecipientDirectory& directory_;
  Clock& clock_;
  std::filesystem::path root_;
  std::size_t capacity_;
  RetryPolicy policy_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<Alert> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread thread_;
  std::vector<DeliveryReceipt> receipts_;
  std::set<std::pair<std::string, std::string>> delivered_;
  NotifierStats stats_;
  std::ofstream log_;
  EventBus::Subscription sub_;
};

}  // namespace lify
