#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace lify {

enum class Role { Admin, Staff, Family };

std::string_view role_code(Role r) noexcept;  // "admin" | "staff" | "family"
std::optional<Role> parse_role(std::string_view code) noexcept;

/// The authenticated principal behind a request.
struct Actor {
  std::string user_id;
  std::string display_name;
  Role role = Role::Family;

  bool is_staff_or_admin() const noexcept { return role != Role::Family; }
};

}  // namespace lify
