#pragma once

// User accounts, password login and bearer sessions.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lify/actor.hpp"
#include "lify/clock.hpp"

namespace lify {

struct UserAccount {
  std::string user_id;
  std::string email;  // stored lower-cased
  std::string display_name;
  Role role = Role::Family;
  std::string password_hash;  // Argon2id encoded string
  std::set<std::string> patient_links;
  bool notify = true;  // receive chat notifications for linked patients
  std::int64_t created_ts_ms = 0;

  Actor actor() const { return {user_id, display_name, role}; }
};

/// Public view: everything except the password hash.
nlohmann::ordered_json user_to_json(const UserAccount& u);

struct Session {
  std::string token;  // only returned once, at login
  std::string user_id;
  std::int64_t issued_ts_ms = 0;
  std::int64_t expires_ts_ms = 0;
};

/// Argon2id cost. The defaults are libsodium's interactive limits; tests
/// use the minimum to stay fast.
struct KdfCost {
  unsigned long long ops;
  std::size_t mem;
  static KdfCost interactive();
  static KdfCost minimum();
};

inline constexpr std::size_t kMinPasswordChars = 10;
inline constexpr int kMaxLoginFailures = 5;  // per email per minute
inline constexpr std::int64_t kSessionTtlMs = 24LL * 3600 * 1000;

/// Accounts persist to {data_root}/accounts.json (rewritten atomically);
/// sessions are kept in memory as SHA-256 digests of the token.
class AccountStore {
 public:
  explicit AccountStore(std::filesystem::path data_root = {}, Clock& clock = SystemClock::instance(),
                        KdfCost cost = KdfCost::interactive());

  /// The very first account may pick any role. Later Staff/Admin accounts
  /// need an Admin `by`; Family may self-register.
  /// Throws EmailTaken, WeakPassword, Forbidden or ValidationError.
  UserAccount register_user(const std::optional<Actor>& by, const std::string& email, const std::string& password,
                            Role role, const std::string& display_name);

  /// Throws BadCredentials (same for unknown email and wrong password) or
  /// RateLimited after five failures for the email within a minute.
  Session login(const std::string& email, const std::string& password);
  void logout(const std::string& token);

  /// Throws Unauthorized for unknown, revoked or expired tokens.
  Actor authenticate(const std::string& token) const;

  std::optional<UserAccount> get(const std::string& user_id) const;
  std::vector<UserAccount> list() const;
  bool empty() const;

  UserAccount set_links(const Actor& by, const std::string& user_id, std::set<std::string> patient_ids);
  UserAccount set_notify(const std::string& user_id, bool enabled);

  /// Users linked to the patient with notifications on.
  std::vector<std::string> linked_users(const std::string& patient_id) const;

 private:
  void save() const;
  std::string next_id();

  std::filesystem::path root_;
  Clock& clock_;
  KdfCost cost_;
  std::string dummy_hash_;  // verified against for unknown emails

  mutable std::mutex mu_;
  std::map<std::string, UserAccount> users_;  // by user_id
  std::map<std::string, std::string> by_email_;
  std::map<std::string, Session> sessions_;  // by token digest
  std::map<std::string, std::deque<std::int64_t>> failures_;
  std::uint64_t last_id_ = 0;
};

}  // namespace lify
