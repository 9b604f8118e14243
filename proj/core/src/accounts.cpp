#include "lify/accounts.hpp"

#include <sodium.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>

#include "lify/error.hpp"
#include "lify/util.hpp"

namespace lify {

namespace fs = std::filesystem;

namespace {

void ensure_sodium() {
  static const bool ready = sodium_init() >= 0;
  if (!ready) throw Error(ErrorCode::IoError, "libsodium failed to initialise");
}

std::string to_hex(const unsigned char* data, std::size_t n) {
  std::string out(n * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), data, n);
  out.pop_back();
  return out;
}

std::string digest(const std::string& token) {
  unsigned char h[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(h, reinterpret_cast<const unsigned char*>(token.data()), token.size());
  return to_hex(h, sizeof h);
}

std::string normalize_email(std::string email) {
  for (auto& c : email) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto at = email.find('@');
  if (email.size() > 254 || at == std::string::npos || at == 0 || at + 1 == email.size() ||
      email.find_first_of(" \t\r\n") != std::string::npos) {
    throw Error(ErrorCode::ValidationError, "invalid email address");
  }
  return email;
}

std::string hash_password(const std::string& password, const KdfCost& cost) {
  char out[crypto_pwhash_STRBYTES];
  if (crypto_pwhash_str_alg(out, password.data(), password.size(), cost.ops, cost.mem, crypto_pwhash_ALG_ARGON2ID13) !=
      0) {
    throw Error(ErrorCode::IoError, "password hashing ran out of memory");
  }
  return out;
}

bool verify_password(const std::string& hash, const std::string& password) {
  return crypto_pwhash_str_verify(hash.c_str(), password.data(), password.size()) == 0;
}

}  // namespace

KdfCost KdfCost::interactive() { return {crypto_pwhash_OPSLIMIT_INTERACTIVE, crypto_pwhash_MEMLIMIT_INTERACTIVE}; }
KdfCost KdfCost::minimum() { return {crypto_pwhash_OPSLIMIT_MIN, crypto_pwhash_MEMLIMIT_MIN}; }

nlohmann::ordered_json user_to_json(const UserAccount& u) {
  nlohmann::ordered_json j;
  j["user_id"] = u.user_id;
  j["email"] = u.email;
  j["display_name"] = u.display_name;
  j["role"] = role_code(u.role);
  j["patient_links"] = u.patient_links;
  j["notify"] = u.notify;
  j["created_ts_ms"] = u.created_ts_ms;
  return j;
}

AccountStore::AccountStore(fs::path data_root, Clock& clock, KdfCost cost)
    : root_(std::move(data_root)), clock_(clock), cost_(cost) {
  ensure_sodium();
  dummy_hash_ = hash_password("not-a-real-password", cost_);
  if (root_.empty()) return;
  fs::create_directories(root_);
  const auto path = root_ / "accounts.json";
  if (!fs::exists(path)) return;
  const auto j = nlohmann::json::parse(util::read_file(path));
  last_id_ = j.value("last_id", std::uint64_t{0});
  for (const auto& e : j.at("users")) {
    UserAccount u;
    u.user_id = e.at("user_id").get<std::string>();
    u.email = e.at("email").get<std::string>();
    u.display_name = e.at("display_name").get<std::string>();
    const auto role = parse_role(e.at("role").get<std::string>());
    if (!role) throw Error(ErrorCode::IoError, "accounts.json: bad role for " + u.user_id);
    u.role = *role;
    u.password_hash = e.at("password_hash").get<std::string>();
    u.patient_links = e.at("patient_links").get<std::set<std::string>>();
    u.notify = e.value("notify", true);
    u.created_ts_ms = e.value("created_ts_ms", std::int64_t{0});
    by_email_[u.email] = u.user_id;
    users_[u.user_id] = std::move(u);
  }
}

void AccountStore::save() const {
  if (root_.empty()) return;
  nlohmann::ordered_json j;
  j["last_id"] = last_id_;
  j["users"] = nlohmann::ordered_json::array();
  for (const auto& [id, u] : users_) {
    auto e = user_to_json(u);
    e["password_hash"] = u.password_hash;
    j["users"].push_back(std::move(e));
  }
  util::write_file_atomic(root_ / "accounts.json", j.dump(2) + "\n");
}

std::string AccountStore::next_id() {
  char buf[24];
  std::snprintf(buf, sizeof buf, "u-%06llu", static_cast<unsigned long long>(++last_id_));
  return buf;
}

UserAccount AccountStore::register_user(const std::optional<Actor>& by, const std::string& email,
                                        const std::string& password, Role role, const std::string& display_name) {
  const auto norm = normalize_email(email);
  if (display_name.empty() || util::utf8_length(display_name) > 100) {
    throw Error(ErrorCode::ValidationError, "display_name must be 1 to 100 characters");
  }
  if (util::utf8_length(password) < kMinPasswordChars) {
    throw Error(ErrorCode::WeakPassword, "password must be at least 10 characters");
  }
  {
    std::lock_guard lock(mu_);
    if (!users_.empty() && role != Role::Family && !(by && by->role == Role::Admin)) {
      throw Error(ErrorCode::Forbidden, "only an admin can create staff or admin accounts");
    }
    if (by_email_.contains(norm)) throw Error(ErrorCode::EmailTaken, "email already registered");
  }
  auto hash = hash_password(password, cost_);  // slow, so outside the lock

  std::lock_guard lock(mu_);
  if (by_email_.contains(norm)) throw Error(ErrorCode::EmailTaken, "email already registered");
  if (!users_.empty() && role != Role::Family && !(by && by->role == Role::Admin)) {
    throw Error(ErrorCode::Forbidden, "only an admin can create staff or admin accounts");
  }
  UserAccount u;
  u.user_id = next_id();
  u.email = norm;
  u.display_name = display_name;
  u.role = role;
  u.password_hash = std::move(hash);
  u.created_ts_ms = clock_.now_ms();
  users_[u.user_id] = u;
  by_email_[norm] = u.user_id;
  try {
    save();
  } catch (...) {
    users_.erase(u.user_id);
    by_email_.erase(norm);
    throw;
  }
  spdlog::info("accounts: registered {} as {}", u.user_id, role_code(role));
  return u;
}

Session AccountStore::login(const std::string& email, const std::string& password) {
  std::string norm;
  try {
    norm = normalize_email(email);
  } catch (const Error&) {
    throw Error(ErrorCode::BadCredentials, "invalid email or password");
  }
  std::string hash;
  std::string user_id;
  {
    std::lock_guard lock(mu_);
    const auto now = clock_.now_ms();
    auto& f = failures_[norm];
    while (!f.empty() && f.front() <= now - 60'000) f.pop_front();
    if (f.size() >= static_cast<std::size_t>(kMaxLoginFailures)) {
      throw Error(ErrorCode::RateLimited, "too many failed logins, try again in a minute");
    }
    if (auto it = by_email_.find(norm); it != by_email_.end()) {
      user_id = it->second;
      hash = users_.at(user_id).password_hash;
    }
  }
  // Unknown emails still pay for one verification so timing does not tell them apart.
  const bool ok = verify_password(user_id.empty() ? dummy_hash_ : hash, password) && !user_id.empty();

  std::lock_guard lock(mu_);
  const auto now = clock_.now_ms();
  if (!ok) {
    failures_[norm].push_back(now);
    throw Error(ErrorCode::BadCredentials, "invalid email or password");
  }
  failures_.erase(norm);
  unsigned char raw[32];
  randombytes_buf(raw, sizeof raw);
  Session s{to_hex(raw, sizeof raw), user_id, now, now + kSessionTtlMs};
  sessions_[digest(s.token)] = Session{{}, s.user_id, s.issued_ts_ms, s.expires_ts_ms};
  return s;
}

void AccountStore::logout(const std::string& token) {
  std::lock_guard lock(mu_);
  sessions_.erase(digest(token));
}

Actor AccountStore::authenticate(const std::string& token) const {
  if (token.empty()) throw Error(ErrorCode::Unauthorized, "missing bearer token");
  const auto d = digest(token);
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(d);
  if (it == sessions_.end() || clock_.now_ms() >= it->second.expires_ts_ms) {
    throw Error(ErrorCode::Unauthorized, "invalid or expired token");
  }
  const auto u = users_.find(it->second.user_id);
  if (u == users_.end()) throw Error(ErrorCode::Unauthorized, "account no longer exists");
  return u->second.actor();
}

std::optional<UserAccount> AccountStore::get(const std::string& user_id) const {
  std::lock_guard lock(mu_);
  const auto it = users_.find(user_id);
  if (it == users_.end()) return std::nullopt;
  return it->second;
}

std::vector<UserAccount> AccountStore::list() const {
  std::lock_guard lock(mu_);
  std::vector<UserAccount> out;
  for (const auto& [id, u] : users_) out.push_back(u);
  return out;
}

bool AccountStore::empty() const {
  std::lock_guard lock(mu_);
  return users_.empty();
}

UserAccount AccountStore::set_links(const Actor& by, const std::string& user_id, std::set<std::string> patient_ids) {
  if (by.role != Role::Admin) throw Error(ErrorCode::Forbidden, "only an admin can link patients");
  std::lock_guard lock(mu_);
  const auto it = users_.find(user_id);
  if (it == users_.end()) throw Error(ErrorCode::NotFound, "no user " + user_id);
  auto previous = std::move(it->second.patient_links);
  it->second.patient_links = std::move(patient_ids);
  try {
    save();
  } catch (...) {
    it->second.patient_links = std::move(previous);
    throw;
  }
  return it->second;
}

UserAccount AccountStore::set_notify(const std::string& user_id, bool enabled) {
  std::lock_guard lock(mu_);
  const auto it = users_.find(user_id);
  if (it == users_.end()) throw Error(ErrorCode::NotFound, "no user " + user_id);
  it->second.notify = enabled;
  save();
  return it->second;
}

std::vector<std::string> AccountStore::linked_users(const std::string& patient_id) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, u] : users_) {
    if (u.notify && u.patient_links.contains(patient_id)) out.push_back(id);
  }
  return out;
}

}  // namespace lify
