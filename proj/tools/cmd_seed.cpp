#include <httplib.h>
#include <sodium.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <map>

#include "commands.hpp"
#include "lify/alert_model.hpp"
#include "lify/app.hpp"
#include "lify/error.hpp"

namespace lify::cli {

namespace {

using Json = nlohmann::json;

struct Response {
  int status = 0;
  Json body;
};

class ApiClient {
 public:
  ApiClient(std::string base, std::string ca) : base_(std::move(base)), ca_(std::move(ca)) {}

  Response call(const std::string& method, const std::string& path, const Json& body = nullptr) const {
    httplib::Client cli(base_);
    if (!ca_.empty()) cli.set_ca_cert_path(ca_.c_str());
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(30, 0);
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    const std::string payload = body.is_null() ? std::string() : body.dump();
    httplib::Result r;
    const auto url = "/api/v1" + path;
    if (method == "GET") r = cli.Get(url, h);
    else if (method == "POST") r = cli.Post(url, h, payload, "application/json");
    else if (method == "PUT") r = cli.Put(url, h, payload, "application/json");
    if (!r) throw Error(ErrorCode::NotConnected, "cannot reach " + base_ + ": " + httplib::to_string(r.error()));
    Response out{r->status, nullptr};
    if (!r->body.empty()) out.body = Json::parse(r->body, nullptr, false);
    return out;
  }

  Response expect(const std::string& method, const std::string& path, const Json& body, std::initializer_list<int> ok) const {
    auto r = call(method, path, body);
    for (int s : ok) {
      if (r.status == s) return r;
    }
    throw Error(ErrorCode::IoError, method + " " + path + " returned " + std::to_string(r.status) + " " + r.body.dump());
  }

  std::string token;

 private:
  std::string base_;
  std::string ca_;
};

std::string new_password() {
  unsigned char raw[12];
  randombytes_buf(raw, sizeof raw);
  char hex[sizeof raw * 2 + 1];
  sodium_bin2hex(hex, sizeof hex, raw, sizeof raw);
  return hex;
}

struct DemoUser {
  const char* email;
  const char* name;
  const char* role;
  std::vector<std::string> patients;
};

Json demo_patient(const char* id, const char* name, const char* born, const char* device, Json conditions,
                  Json medications) {
  return {{"patient_id", id},          {"name", name},         {"birth_date", born},
          {"conditions", conditions}, {"medications", medications}, {"device_ids", {device}},
          {"notes", ""}};
}

void print_created(const std::string& email, const std::string& role, const std::string& password) {
  // Credentials are shown exactly once, when the account is created.
  std::cout << Json{{"created", "user"}, {"email", email}, {"role", role}, {"password", password}}.dump() << std::endl;
}

int seed_demo(ApiClient& api, const std::string& admin_email) {
  // Admin: log in with LIFY_ADMIN_PASSWORD, or create the first account.
  if (const char* pw = std::getenv("LIFY_ADMIN_PASSWORD"); pw && *pw) {
    const auto r = api.expect("POST", "/auth/login", {{"email", admin_email}, {"password", pw}}, {200});
    api.token = r.body.at("token").get<std::string>();
  } else {
    const auto pw_new = new_password();
    const auto r = api.call("POST", "/auth/register",
                            {{"email", admin_email}, {"password", pw_new}, {"role", "admin"}, {"display_name", "Admin"}});
    if (r.status != 201) {
      spdlog::error("seed: accounts already exist; set LIFY_ADMIN_PASSWORD for {}", admin_email);
      return kExitUsage;
    }
    print_created(admin_email, "admin", pw_new);
    const auto login = api.expect("POST", "/auth/login", {{"email", admin_email}, {"password", pw_new}}, {200});
    api.token = login.body.at("token").get<std::string>();
  }

  const std::vector<Json> patients = {
      demo_patient("p-001", "Ana Pereira", "1941-03-02", "dev-01", {"hypertension"},
                   Json::array({{{"name", "amlodipine"}, {"dose", "5 mg"}, {"schedule", "08:00"}}})),
      demo_patient("p-002", "Bento Costa", "1938-11-20", "dev-02", {"COPD"},
                   Json::array({{{"name", "tiotropium"}, {"dose", "18 mcg"}, {"schedule", "09:00"}}})),
      demo_patient("p-003", "Carla Dias", "1945-06-14", "dev-03", {"type 2 diabetes"},
                   Json::array({{{"name", "metformin"}, {"dose", "500 mg"}, {"schedule", "08:00 20:00"}}})),
  };
  for (const auto& p : patients) {
    const auto id = p.at("patient_id").get<std::string>();
    const auto existing = api.call("GET", "/patients/" + id);
    if (existing.status == 200 && !existing.body.value("deleted", false)) {
      auto body = p;
      body["version"] = existing.body.at("version");
      api.expect("PUT", "/patients/" + id, body, {200});
      std::cout << Json{{"updated", "patient"}, {"patient_id", id}}.dump() << std::endl;
    } else {
      api.expect("POST", "/patients", p, {201});
      std::cout << Json{{"created", "patient"}, {"patient_id", id}}.dump() << std::endl;
    }
    Json rules = Json::array();
    for (auto m : {MetricKind::TempC, MetricKind::HrBpm, MetricKind::Spo2Pct}) {
      const auto r = default_rule(id, m);
      rules.push_back({{"metric", metric_code(m)},
                       {"min", r.min},
                       {"max", r.max},
                       {"debounce_n", r.debounce_n},
                       {"rearm_m", r.rearm_m},
                       {"severity", severity_code(r.severity)},
                       {"enabled", true}});
    }
    api.expect("PUT", "/patients/" + id + "/rules", {{"rules", rules}}, {200});
  }

  const std::vector<DemoUser> users = {
      {"nurse.joana@lify.local", "Nurse J.", "staff", {"p-001", "p-002", "p-003"}},
      {"dr.marta@lify.local", "Dr. Marta S.", "staff", {"p-001", "p-002", "p-003"}},
      {"rui.pereira@lify.local", "Rui Pereira", "family", {"p-001"}},
      {"ines.costa@lify.local", "Ines Costa", "family", {"p-002", "p-003"}},
  };
  std::map<std::string, std::string> ids;
  const auto listed = api.expect("GET", "/users", nullptr, {200});
  for (const auto& u : listed.body.at("users")) {
    ids[u.at("email").get<std::string>()] = u.at("user_id").get<std::string>();
  }
  for (const auto& u : users) {
    if (!ids.contains(u.email)) {
      const auto pw = new_password();
      const auto r = api.expect("POST", "/auth/register",
                                {{"email", u.email}, {"password", pw}, {"role", u.role}, {"display_name", u.name}},
                                {201});
      ids[u.email] = r.body.at("user_id").get<std::string>();
      print_created(u.email, u.role, pw);
    }
    api.expect("PUT", "/users/" + ids[u.email] + "/links", {{"patient_ids", u.patients}}, {200});
  }
  std::cout << Json{{"seeded", "demo"}, {"users", users.size() + 1}, {"patients", patients.size()}}.dump() << std::endl;
  return kExitOk;
}

}  // namespace

int cmd_seed(const SeedOptions& o) {
  if (sodium_init() < 0) throw Error(ErrorCode::IoError, "libsodium failed to initialise");
  if (!o.api.empty()) {
    ApiClient api(o.api, o.api_ca);
    return seed_demo(api, o.admin_email);
  }
  // Offline: a private API-only stack on an ephemeral port over the data root.
  StackConfig cfg;
  cfg.data_root = o.data_root;
  cfg.services = {"api"};
  cfg.api.listen = "127.0.0.1:0";
  Stack stack(cfg);
  stack.start();
  ApiClient api(stack.api()->base_url(), {});
  const int rc = seed_demo(api, o.admin_email);
  stack.stop();
  return rc;
}

}  // namespace lify::cli
