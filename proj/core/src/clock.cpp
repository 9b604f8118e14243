#include "lify/clock.hpp"

#include <cmath>
#include <string>
#include <thread>

#include "lify/error.hpp"

namespace lify {

std::int64_t wall_now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::int64_t SystemClock::now_ms() const { return wall_now_ms(); }

void SystemClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

SystemClock& SystemClock::instance() {
  static SystemClock clock;
  return clock;
}

std::int64_t ManualClock::now_ms() const {
  std::lock_guard lock(mu_);
  return now_;
}

void ManualClock::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  sleeps_.push_back(d.count());
  now_ += d.count();
}

void ManualClock::advance(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  now_ += d.count();
}

std::vector<std::int64_t> ManualClock::sleeps() const {
  std::lock_guard lock(mu_);
  return sleeps_;
}

std::int64_t parse_duration_ms(std::string_view text) {
  std::size_t split = 0;
  while (split < text.size() && ((text[split] >= '0' && text[split] <= '9') || text[split] == '.')) ++split;
  const std::string number(text.substr(0, split));
  const std::string_view unit = text.substr(split);

  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(number, &used);
    if (used != number.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "malformed duration '" + std::string(text) + "'");
  }

  double scale = 0.0;
  if (unit.empty() || unit == "s") scale = 1000.0;
  else if (unit == "ms") scale = 1.0;
  else if (unit == "m" || unit == "min") scale = 60'000.0;
  else if (unit == "h") scale = 3'600'000.0;
  else throw Error(ErrorCode::ConfigError, "unknown duration unit in '" + std::string(text) + "'");

  return static_cast<std::int64_t>(std::llround(value * scale));
}

}  // namespace lify
