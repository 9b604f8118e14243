#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <string_view>
#include <vector>

namespace lify {

/// Wall clock plus sleeping, injectable so that backoff schedules, token
/// expiry and rate limits can be tested without waiting.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() const override;
  void sleep_for(std::chrono::milliseconds d) override;

  static SystemClock& instance();
};

/// Time only moves when the test says so. sleep_for advances the clock
/// immediately and records the requested duration.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start_ms = 1'700'000'000'000) : now_(start_ms) {}

  std::int64_t now_ms() const override;
  void sleep_for(std::chrono::milliseconds d) override;
  void advance(std::chrono::milliseconds d);
  std::vector<std::int64_t> sleeps() const;

 private:
  mutable std::mutex mu_;
  std::int64_t now_;
  std::vector<std::int64_t> sleeps_;
};

std::int64_t wall_now_ms();

/// "1500ms", "1s", "2.5s", "3m", "1h"; a bare number is seconds.
/// Throws Error(ConfigError) on malformed input.
std::int64_t parse_duration_ms(std::string_view text);

}  // namespace lify
