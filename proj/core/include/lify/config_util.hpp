#pragma once

// Small helpers for reading the JSON config sections strictly.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace lify::config {

/// Throws Error(ConfigError) unless `j` is an object whose keys are all in `allowed`.
void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view section);

/// Durations are either a number of seconds or a string for parse_duration_ms.
std::int64_t duration_ms(const nlohmann::json& v, std::string_view what);

[[noreturn]] void throw_bad_value(std::string_view section, std::string_view key, const std::string& value);

/// Typed read with a ConfigError naming the offending key.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, std::string_view section) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw_bad_value(section, key, it->dump());
  }
}

}  // namespace lify::config
