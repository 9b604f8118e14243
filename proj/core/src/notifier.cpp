#include "lify/notifier.hpp"

#include <httplib.h>
#include <sodium.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "lify/error.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

void ensure_sodium() {
  static const bool ready = sodium_init() >= 0;
  if (!ready) throw Error(ErrorCode::IoError, "libsodium failed to initialise");
}

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string_view metric_label(MetricKind m) {
  switch (m) {
    case MetricKind::TempC: return "temperature";
    case MetricKind::HrBpm: return "heart rate";
    case MetricKind::Spo2Pct: return "SpO2";
  }
  return "value";
}

std::string_view metric_unit(MetricKind m) {
  switch (m) {
    case MetricKind::TempC: return "°C";
    case MetricKind::HrBpm: return "bpm";
    case MetricKind::Spo2Pct: return "%";
  }
  return "";
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string permanent_reason(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 401: return "unauthorized";
    case 403: return "forbidden";
    case 404: return "not_found";
    default: return "http_" + std::to_string(status);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

TelegramTransport::TelegramTransport(std::string api_base, std::string token, std::chrono::milliseconds timeout)
    : token_(std::move(token)), timeout_(timeout) {
  if (token_.empty()) throw Error(ErrorCode::ConfigError, "bot token is empty (set LIFY_BOT_TOKEN)");
  const auto scheme_end = api_base.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "notifier api_base needs a scheme: " + api_base);
  const auto scheme = api_base.substr(0, scheme_end);
  if (scheme != "https" && scheme != "http") {
    throw Error(ErrorCode::ConfigError, "notifier api_base must be http(s): " + api_base);
  }
  const auto path_start = api_base.find('/', scheme_end + 3);
  scheme_host_port_ = api_base.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = api_base.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

TelegramTransport TelegramTransport::from_env(std::string api_base) {
  const char* token = std::getenv("LIFY_BOT_TOKEN");
  if (!token || !*token) throw Error(ErrorCode::ConfigError, "LIFY_BOT_TOKEN is not set");
  return TelegramTransport(std::move(api_base), token);
}

SendResult TelegramTransport::send(const std::string& chat_id, const std::string& text) {
  httplib::Client cli(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  cli.enable_server_certificate_verification(true);

  nlohmann::json body;
  body["chat_id"] = chat_id;
  body["text"] = text;
  const auto res = cli.Post(path_prefix_ + "/bot" + token_ + "/sendMessage", body.dump(), "application/json");
  if (!res) {
    // The error string never contains the request path, so the token stays out of the log.
    spdlog::warn("notifier: sendMessage to chat {} failed: {}", chat_id, httplib::to_string(res.error()));
    return {};
  }
  SendResult r;
  r.status = res->status;
  const auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (!j.is_discarded() && j.is_object()) {
    r.ok = j.value("ok", false);
    if (j.contains("parameters") && j["parameters"].is_object() && j["parameters"].contains("retry_after")) {
      r.retry_after_s = j["parameters"]["retry_after"].get<std::int64_t>();
    }
  }
  if (!r.retry_after_s && res->has_header("Retry-After")) {
    try {
      r.retry_after_s = std::stoll(res->get_header_value("Retry-After"));
    } catch (const std::exception&) {
    }
  }
  return r;
}

MockTransport::MockTransport(Clock& clock, fs::path log_path) : clock_(clock) {
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
    log_.open(log_path, std::ios::binary | std::ios::app);
    if (!log_) throw Error(ErrorCode::IoError, "cannot open " + log_path.string());
  }
}

void MockTransport::script(const std::string& chat_id, std::vector<SendResult> results) {
  std::lock_guard lock(mu_);
  auto& q = scripts_[chat_id];
  q.insert(q.end(), results.begin(), results.end());
}

void MockTransport::set_default(SendResult r) {
  std::lock_guard lock(mu_);
  default_ = r;
}

SendResult MockTransport::send(const std::string& chat_id, const std::string& text) {
  std::lock_guard lock(mu_);
  const auto now = clock_.now_ms();
  sent_.push_back({chat_id, text, now});
  SendResult r = default_;
  if (auto it = scripts_.find(chat_id); it != scripts_.end() && !it->second.empty()) {
    r = it->second.front();
    it->second.pop_front();
  }
  if (log_.is_open()) {
    nlohmann::ordered_json j;
    j["ts_ms"] = now;
    j["chat_id"] = chat_id;
    j["text"] = text;
    j["status"] = r.status;
    log_ << j.dump() << '\n';
    log_.flush();
  }
  return r;
}

std::vector<MockTransport::Sent> MockTransport::sent() const {
  std::lock_guard lock(mu_);
  return sent_;
}

std::vector<MockTransport::Sent> MockTransport::sent_to(const std::string& chat_id) const {
  std::lock_guard lock(mu_);
  std::vector<Sent> out;
  for (const auto& s : sent_) {
    if (s.chat_id == chat_id) out.push_back(s);
  }
  return out;
}

void MockTransport::clear() {
  std::lock_guard lock(mu_);
  sent_.clear();
  scripts_.clear();
}

// ---------------------------------------------------------------------------

BindingStore::BindingStore(fs::path data_root, Clock& clock) : root_(std::move(data_root)), clock_(clock) {
  ensure_sodium();
  if (root_.empty()) return;
  fs::create_directories(root_);
  const auto path = root_ / "bindings.json";
  if (!fs::exists(path)) return;
  const auto j = nlohmann::json::parse(util::read_file(path));
  for (const auto& b : j.at("bindings")) {
    ChatBinding cb{b.at("user_id").get<std::string>(), b.at("chat_id").get<std::string>(), true};
    verified_[cb.user_id] = cb;
  }
}

void BindingStore::save() const {
  if (root_.empty()) return;
  nlohmann::ordered_json j;
  j["bindings"] = nlohmann::ordered_json::array();
  for (const auto& [user, b] : verified_) {
    nlohmann::ordered_json e;
    e["user_id"] = b.user_id;
    e["chat_id"] = b.chat_id;
    j["bindings"].push_back(e);
  }
  util::write_file_atomic(root_ / "bindings.json", j.dump(2) + "\n");
}

BindCode BindingStore::issue_code(const std::string& user_id, const std::optional<std::string>& chat_id) {
  char digits[8];
  std::snprintf(digits, sizeof digits, "%06u", static_cast<unsigned>(randombytes_uniform(1'000'000)));
  BindCode c{digits, clock_.now_ms() + kBindCodeTtlMs};
  std::lock_guard lock(mu_);
  codes_[user_id] = c;
  if (chat_id) pending_[user_id] = ChatBinding{user_id, *chat_id, false};
  return c;
}

ChatBinding BindingStore::bind_chat(const std::string& user_id, const std::string& chat_id, const std::string& code) {
  if (chat_id.empty()) throw Error(ErrorCode::ValidationError, "chat_id must not be empty");
  std::lock_guard lock(mu_);
  const auto it = codes_.find(user_id);
  if (it == codes_.end() || code.size() != it->second.code.size() ||
      sodium_memcmp(code.data(), it->second.code.data(), code.size()) != 0) {
    throw Error(ErrorCode::BadCode, "verification code does not match");
  }
  if (clock_.now_ms() >= it->second.expires_ts_ms) throw Error(ErrorCode::Expired, "verification code expired");
  codes_.erase(it);
  pending_.erase(user_id);
  ChatBinding b{user_id, chat_id, true};
  verified_[user_id] = b;
  save();
  return b;
}

std::optional<ChatBinding> BindingStore::binding(const std::string& user_id) const {
  std::lock_guard lock(mu_);
  if (auto it = verified_.find(user_id); it != verified_.end()) return it->second;
  if (auto it = pending_.find(user_id); it != pending_.end()) return it->second;
  return std::nullopt;
}

void BindingStore::unbind(const std::string& user_id) {
  std::lock_guard lock(mu_);
  verified_.erase(user_id);
  pending_.erase(user_id);
  codes_.erase(user_id);
  save();
}

void BindingStore::put(const ChatBinding& b) {
  std::lock_guard lock(mu_);
  if (b.verified) {
    pending_.erase(b.user_id);
    verified_[b.user_id] = b;
  } else {
    verified_.erase(b.user_id);
    pending_[b.user_id] = b;
  }
  save();
}

void StaticDirectory::add(const std::string& patient_id, const std::string& name, std::vector<std::string> users) {
  std::lock_guard lock(mu_);
  patients_[patient_id] = {name, std::move(users)};
}

std::vector<std::string> StaticDirectory::recipients(const std::string& patient_id) const {
  std::lock_guard lock(mu_);
  const auto it = patients_.find(patient_id);
  return it == patients_.end() ? std::vector<std::string>{} : it->second.second;
}

std::string StaticDirectory::patient_name(const std::string& patient_id) const {
  std::lock_guard lock(mu_);
  const auto it = patients_.find(patient_id);
  return it == patients_.end() ? patient_id : it->second.first;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json receipt_to_json(const DeliveryReceipt& r) {
  nlohmann::ordered_json j;
  j["alert_id"] = r.alert_id;
  j["chat_id"] = r.chat_id;
  j["user_id"] = r.user_id;
  j["attempts"] = r.attempts;
  j["outcome"] = r.outcome == DeliveryOutcome::Delivered ? "delivered" : "gave_up";
  if (r.outcome == DeliveryOutcome::GaveUp) j["reason"] = r.reason;
  j["last_attempt_ts_ms"] = r.last_attempt_ts_ms;
  return j;
}

DeliveryReceipt receipt_from_json(const nlohmann::json& j) {
  DeliveryReceipt r;
  r.alert_id = j.at("alert_id").get<std::string>();
  r.chat_id = j.at("chat_id").get<std::string>();
  r.user_id = j.value("user_id", std::string());
  r.attempts = j.at("attempts").get<int>();
  r.outcome = j.at("outcome").get<std::string>() == "delivered" ? DeliveryOutcome::Delivered : DeliveryOutcome::GaveUp;
  r.reason = j.value("reason", std::string());
  r.last_attempt_ts_ms = j.at("last_attempt_ts_ms").get<std::int64_t>();
  return r;
}

std::string short_name(const std::string& full_name) {
  std::istringstream in(full_name);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.empty()) return full_name;
  if (words.size() == 1) return words[0];
  // first byte of the last word, widened to a whole UTF-8 code point
  const auto& last = words.back();
  std::size_t len = 1;
  while (len < last.size() && (static_cast<unsigned char>(last[len]) & 0xC0) == 0x80) ++len;
  return words.front() + " " + last.substr(0, len) + ".";
}

std::string format_alert_message(const Alert& a, const std::string& patient_name) {
  std::string text = "[" + upper(severity_code(a.severity)) + "] " + short_name(patient_name) + ": ";
  if (a.is_manual()) {
    text += a.message + " — raised by " + (a.raised_by_name.empty() ? a.raised_by.value_or("staff") : a.raised_by_name);
  } else if (a.metric && a.value) {
    text += std::string(metric_label(*a.metric)) + " = " + fixed1(*a.value) + " " + std::string(metric_unit(*a.metric));
    if (a.rule_min && a.rule_max) text += " (range " + fixed1(*a.rule_min) + "–" + fixed1(*a.rule_max) + ")";
  } else {
    text += a.message;
  }
  for (auto& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return util::utf8_truncate(text, kMaxChatMessageChars);
}

std::chrono::milliseconds RetryPolicy::delay(int retry, std::chrono::milliseconds previous,
                                             std::optional<std::int64_t> retry_after_s) const {
  std::chrono::milliseconds d = base * (1LL << std::min(retry - 1, 30));
  if (retry_after_s) d = std::max(d, std::chrono::milliseconds(*retry_after_s * 1000));
  return std::min(cap, std::max(d, previous));
}

// ---------------------------------------------------------------------------

Notifier::Notifier(ChatTransport& transport, BindingStore& bindings, const RecipientDirectory& directory, Clock& clock,
                   fs::path data_root, std::size_t queue_capacity, RetryPolicy policy)
    : transport_(transport),
      bindings_(bindings),
      directory_(directory),
      clock_(clock),
      root_(std::move(data_root)),
      capacity_(std::max<std::size_t>(1, queue_capacity)),
      policy_(policy) {
  if (!root_.empty()) load();
}

Notifier::~Notifier() {
  sub_.reset();
  stop();
}

void Notifier::load() {
  fs::create_directories(root_);
  const auto path = root_ / "receipts.ndjson";
  if (fs::exists(path)) {
    std::string data = util::read_file(path);
    const auto last_nl = data.rfind('\n');
    const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (complete < data.size()) {
      spdlog::warn("notifier: dropping torn tail of {}", path.string());
      fs::resize_file(path, complete);
      data.resize(complete);
    }
    std::istringstream in(data);
    bool header = true;
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (header) {
          header = false;
          continue;
        }
        auto r = receipt_from_json(j);
        if (r.outcome == DeliveryOutcome::Delivered) delivered_.insert({r.alert_id, r.chat_id});
        receipts_.push_back(std::move(r));
      } catch (const std::exception& e) {
        spdlog::warn("notifier: skipping malformed receipt line: {}", e.what());
      }
    }
  }
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  log_.open(path, std::ios::binary | std::ios::app);
  if (!log_) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  if (fresh) {
    nlohmann::ordered_json h;
    h["segment"] = 1;
    h["log"] = "receipts";
    log_ << h.dump() << '\n';
    log_.flush();
  }
}

void Notifier::attach(EventBus& bus) {
  sub_ = bus.subscribe([this](const BusEvent& e) {
    const auto* a = std::get_if<AlertEvent>(&e);
    if (a && a->kind == AlertEvent::Kind::Created) enqueue(a->alert);
  });
}

void Notifier::start() {
  std::lock_guard lock(mu_);
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { run(); });
}

void Notifier::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    cv_.notify_all();
  }
  if (thread_.joinable()) thread_.join();
}

bool Notifier::enqueue(const Alert& a) {
  std::lock_guard lock(mu_);
  ++stats_.enqueued;
  bool kept = true;
  if (queue_.size() >= capacity_) {
    spdlog::error("notifier: queue full, dropping alert {}", queue_.front().alert_id);
    queue_.pop_front();
    ++stats_.dropped;
    kept = false;
  }
  queue_.push_back(a);
  cv_.notify_all();
  return kept;
}

void Notifier::run() {
  for (;;) {
    Alert a;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      a = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    try {
      dispatch(a);
    } catch (const std::exception& e) {
      spdlog::error("notifier: dispatch of {} failed: {}", a.alert_id, e.what());
    }
    std::lock_guard lock(mu_);
    busy_ = false;
    cv_.notify_all();
  }
}

bool Notifier::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_; });
}

bool Notifier::pause(std::chrono::milliseconds d) {
  // Sleep through the clock in short slices so stop() is honoured promptly.
  const auto until = clock_.now_ms() + d.count();
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return false;
    }
    const auto left = until - clock_.now_ms();
    if (left <= 0) return true;
    clock_.sleep_for(std::chrono::milliseconds(std::min<std::int64_t>(left, 200)));
  }
}

std::vector<DeliveryReceipt> Notifier::dispatch(const Alert& a) {
  const auto text = format_alert_message(a, directory_.patient_name(a.patient_id));
  std::vector<DeliveryReceipt> out;
  for (const auto& user : directory_.recipients(a.patient_id)) {
    const auto b = bindings_.binding(user);
    if (!b || !b->verified) {
      std::lock_guard lock(mu_);
      ++stats_.skipped_unverified;
      continue;
    }
    {
      std::lock_guard lock(mu_);
      if (delivered_.contains({a.alert_id, b->chat_id})) {
        ++stats_.skipped_already_delivered;
        continue;
      }
    }
    auto r = deliver(a, user, b->chat_id, text);
    record(r);
    out.push_back(std::move(r));
  }
  return out;
}

DeliveryReceipt Notifier::deliver(const Alert& a, const std::string& user_id, const std::string& chat_id,
                                  const std::string& text) {
  DeliveryReceipt r{a.alert_id, chat_id, user_id, 0, DeliveryOutcome::GaveUp, {}, 0};
  std::chrono::milliseconds previous{0};
  for (int attempt = 1;; ++attempt) {
    r.attempts = attempt;
    r.last_attempt_ts_ms = clock_.now_ms();
    const auto res = transport_.send(chat_id, text);
    if (res.status == 200 && res.ok) {
      r.outcome = DeliveryOutcome::Delivered;
      r.reason.clear();
      return r;
    }
    if (res.status == 200) {
      r.reason = "rejected";
      return r;
    }
    if (res.status >= 400 && res.status < 500 && res.status != 429) {
      r.reason = permanent_reason(res.status);
      return r;
    }
    r.reason = res.status == 0 ? "timeout" : res.status == 429 ? "rate_limited" : "server_error";
    if (attempt > policy_.max_retries) return r;
    const auto d = policy_.delay(attempt, previous, res.status == 429 ? res.retry_after_s : std::nullopt);
    previous = d;
    spdlog::info("notifier: alert {} to chat {}: {} (attempt {}), retrying in {} ms", a.alert_id, chat_id, r.reason,
                 attempt, d.count());
    if (!pause(d)) {
      r.reason = "shutdown";
      return r;
    }
  }
}

void Notifier::record(const DeliveryReceipt& r) {
  std::lock_guard lock(mu_);
  if (r.outcome == DeliveryOutcome::Delivered) {
    ++stats_.delivered;
    delivered_.insert({r.alert_id, r.chat_id});
  } else {
    ++stats_.gave_up;
    spdlog::warn("notifier: gave up on alert {} to chat {} after {} attempts: {}", r.alert_id, r.chat_id, r.attempts,
                 r.reason);
  }
  receipts_.push_back(r);
  if (log_.is_open()) {
    log_ << receipt_to_json(r).dump() << '\n';
    log_.flush();
    if (!log_) spdlog::error("notifier: cannot append receipt for {}", r.alert_id);
  }
}

std::vector<DeliveryReceipt> Notifier::receipts() const {
  std::lock_guard lock(mu_);
  return receipts_;
}

NotifierStats Notifier::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

}  // namespace lify
