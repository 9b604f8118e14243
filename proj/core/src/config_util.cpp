#include "lify/config_util.hpp"

#include <algorithm>

#include "lify/clock.hpp"
#include "lify/error.hpp"

namespace lify::config {

void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view section) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, std::string(section) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), std::string_view(key)) == allowed.end()) {
      throw Error(ErrorCode::ConfigError, std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

std::int64_t duration_ms(const nlohmann::json& v, std::string_view what) {
  if (v.is_number()) return static_cast<std::int64_t>(v.get<double>() * 1000.0);
  if (v.is_string()) return parse_duration_ms(v.get<std::string>());
  throw Error(ErrorCode::ConfigError, std::string(what) + ": expected a duration, got " + v.dump());
}

void throw_bad_value(std::string_view section, std::string_view key, const std::string& value) {
  throw Error(ErrorCode::ConfigError,
              std::string(section) + "." + std::string(key) + ": invalid value " + value);
}

}  // namespace lify::config
