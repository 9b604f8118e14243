#include <gtest/gtest.h>

#include "api_rig.hpp"
#include "lify/envelope.hpp"
#include "lify/error.hpp"
#include "lify/util.hpp"

using namespace lify;
using namespace std::chrono_literals;
using lify::testing::ApiRig;
using lify::testing::SseReader;
using Json = nlohmann::json;

namespace {

constexpr const char* kPassword = "correct horse battery";

/// Admin, staff, a family member linked to p-ana and one linked to nobody.
struct Seeded : ApiRig {
  std::string admin, staff, family, stranger;
  std::string family_id, stranger_id;

  Seeded() {
    register_as({}, "admin@lify.test", "admin", "Admin A.");
    admin = login("admin@lify.test");
    register_as(admin, "nurse@lify.test", "staff", "Nurse J.");
    staff = login("nurse@lify.test");
    family_id = register_as({}, "son@lify.test", "family", "Son S.").at("user_id");
    family = login("son@lify.test");
    stranger_id = register_as({}, "other@lify.test", "family", "Other O.").at("user_id");
    stranger = login("other@lify.test");

    EXPECT_EQ(call("POST", "/patients", staff, patient("p-ana", "Ana Pereira", {"dev-ana"})).status, 201);
    EXPECT_EQ(call("POST", "/patients", staff, patient("p-bob", "Bob Silva", {"dev-bob"})).status, 201);
    EXPECT_EQ(call("PUT", "/users/" + family_id + "/links", admin, {{"patient_ids", {"p-ana"}}}).status, 200);
  }

  Json register_as(const std::string& token, const std::string& email, const std::string& role,
                   const std::string& name) {
    const auto r = call("POST", "/auth/register", token,
                        {{"email", email}, {"password", kPassword}, {"role", role}, {"display_name", name}});
    EXPECT_EQ(r.status, 201) << r.body.dump();
    return r.body;
  }

  static Json patient(const std::string& id, const std::string& name, std::vector<std::string> devices) {
    return {{"patient_id", id},
            {"name", name},
            {"birth_date", "1941-03-02"},
            {"conditions", {"hypertension"}},
            {"medications", {{{"name", "amlodipine"}, {"dose", "5 mg"}, {"schedule", "08:00"}}}},
            {"device_ids", devices}};
  }

  void ingest(const std::string& patient_id, const std::string& device, std::int64_t ts, double temp) {
    TelemetryEnvelope env;
    env.device_id = device;
    env.patient_id = patient_id;
    env.ts_ms = ts;
    env.metrics[MetricKind::TempC] = temp;
    env.quality[MetricKind::TempC] = Quality::Ok;
    gateway.on_message(telemetry_topic(device), serialize(env));
  }
};

}  // namespace

TEST(Api, RoleMatrix) {
  Seeded s;
  s.ingest("p-ana", "dev-ana", wall_now_ms() - 1000, 36.6);
  const auto alert_id = s.alerts.trigger_manual({"u-x", "X", Role::Staff}, "p-ana", "check", Severity::Warning).alert_id;
  const auto alert_id2 = s.alerts.trigger_manual({"u-x", "X", Role::Staff}, "p-ana", "check", Severity::Warning).alert_id;
  int throwaway = 0;

  struct Case {
    std::string method, path;
    std::function<Json()> body;
    int anon, family, stranger, staff, admin;
  };
  const auto none = [] { return Json(nullptr); };
  const auto fresh_patient = [&] {
    return Seeded::patient("p-tmp" + std::to_string(++throwaway), "Tmp T.", {});
  };
  const auto rule = [] { return Json{{"metric", "temp_c"}, {"min", 35.5}, {"max", 38.0}}; };
  const auto manual = [] { return Json{{"patient_id", "p-ana"}, {"message", "patient fell"}, {"severity", "critical"}}; };
  const auto links = [] { return Json{{"patient_ids", Json::array()}}; };
  const auto fam_register = [&] {
    return Json{{"email", "fam" + std::to_string(++throwaway) + "@lify.test"},
                {"password", kPassword},
                {"role", "family"},
                {"display_name", "F"}};
  };
  const auto staff_register = [&] {
    return Json{{"email", "staff" + std::to_string(++throwaway) + "@lify.test"},
                {"password", kPassword},
                {"role", "staff"},
                {"display_name", "S"}};
  };

  std::vector<Case> cases = {
      {"GET", "/health", none, 200, 200, 200, 200, 200},
      {"POST", "/auth/register", fam_register, 201, 201, 201, 201, 201},
      {"POST", "/auth/register", staff_register, 403, 403, 403, 403, 201},
      {"GET", "/me", none, 401, 200, 200, 200, 200},
      {"GET", "/users", none, 401, 403, 403, 403, 200},
      {"PUT", "/users/" + s.stranger_id + "/links", links, 401, 403, 403, 403, 200},
      {"GET", "/patients", none, 401, 200, 200, 200, 200},
      {"POST", "/patients", fresh_patient, 401, 403, 403, 201, 201},
      {"GET", "/patients/p-ana", none, 401, 200, 403, 200, 200},
      {"GET", "/patients/p-bob", none, 401, 403, 403, 200, 200},
      {"GET", "/patients/p-nobody", none, 401, 404, 404, 404, 404},
      {"PUT", "/patients/p-bob", [] { return Seeded::patient("p-bob", "Bob Silva", {"dev-bob"}); }, 401, 403, 403, 200,
       200},
      {"GET", "/patients/p-ana/telemetry?metric=temp_c", none, 401, 200, 403, 200, 200},
      {"GET", "/patients/p-ana/latest", none, 401, 200, 403, 200, 200},
      {"GET", "/patients/p-ana/rules", none, 401, 200, 403, 200, 200},
      {"PUT", "/patients/p-ana/rules", rule, 401, 403, 403, 200, 200},
      {"GET", "/alerts", none, 401, 200, 200, 200, 200},
      {"GET", "/alerts?patient_id=p-bob", none, 401, 403, 403, 200, 200},
      {"POST", "/alerts", manual, 401, 403, 403, 201, 201},
      {"POST", "/notify/bind-code", none, 401, 201, 201, 201, 201},
      {"GET", "/notify/binding", none, 401, 200, 200, 200, 200},
      {"POST", "/auth/logout", none, 401, 204, 204, 204, 204},
  };
  for (const auto& c : cases) {
    const std::vector<std::pair<std::string, int>> who = {
        {"", c.anon}, {s.family, c.family}, {s.stranger, c.stranger}, {s.staff, c.staff}, {s.admin, c.admin}};
    const char* names[] = {"anon", "family", "stranger", "staff", "admin"};
    for (std::size_t i = 0; i < who.size(); ++i) {
      const auto r = s.call(c.method, c.path, who[i].first, c.body());
      EXPECT_EQ(r.status, who[i].second) << c.method << " " << c.path << " as " << names[i] << ": " << r.body.dump();
      if (r.status >= 400) {
        ASSERT_TRUE(r.body.contains("error")) << c.path;
        EXPECT_TRUE(r.body["error"].contains("code"));
        EXPECT_TRUE(r.body["error"].contains("message"));
      }
    }
    if (c.path == "/auth/logout") break;  // tokens are gone now
  }

  // Role-checked mutations that can only succeed once get their own checks.
  s.admin = s.login("admin@lify.test");
  s.staff = s.login("nurse@lify.test");
  s.family = s.login("son@lify.test");
  EXPECT_EQ(s.call("POST", "/alerts/" + alert_id + "/ack").status, 401);
  EXPECT_EQ(s.call("POST", "/alerts/" + alert_id + "/ack", s.family).status, 403);
  EXPECT_EQ(s.call("POST", "/alerts/" + alert_id + "/ack", s.staff).status, 200);
  EXPECT_EQ(s.call("POST", "/alerts/" + alert_id + "/ack", s.admin).status, 409);
  EXPECT_EQ(s.call("POST", "/alerts/" + alert_id2 + "/ack", s.admin).status, 200);
  EXPECT_EQ(s.call("POST", "/alerts/a-404/ack", s.staff).status, 404);
  s.patients.create(PatientProfile{"p-del", "Del D.", "1950-01-01"});
  EXPECT_EQ(s.call("DELETE", "/patients/p-del").status, 401);
  EXPECT_EQ(s.call("DELETE", "/patients/p-del", s.family).status, 403);
  EXPECT_EQ(s.call("DELETE", "/patients/p-del", s.staff).status, 204);
  EXPECT_EQ(s.call("DELETE", "/patients/p-del", s.admin).status, 404);
  EXPECT_EQ(s.call("POST", "/notify/bind", {}, {{"chat_id", "1"}, {"code", "123456"}}).status, 401);
  EXPECT_EQ(s.call("GET", "/no/such/endpoint", s.staff).status, 404);
}

TEST(Api, RegistrationRules) {
  ApiRig r;
  const auto reg = [&](const std::string& token, const std::string& email, const std::string& role,
                       const std::string& password = kPassword) {
    return r.call("POST", "/auth/register", token,
                  {{"email", email}, {"password", password}, {"role", role}, {"display_name", "X"}});
  };
  EXPECT_EQ(reg({}, "boss@lify.test", "admin").status, 201);  // first account bootstraps
  EXPECT_EQ(reg({}, "second@lify.test", "admin").status, 403);
  EXPECT_EQ(reg({}, "second@lify.test", "staff").status, 403);
  const auto dup = reg({}, "BOSS@Lify.Test", "family");
  EXPECT_EQ(dup.status, 409);
  EXPECT_EQ(dup.body["error"]["code"], "email_taken");
  const auto weak = reg({}, "weak@lify.test", "family", "123456789");
  EXPECT_EQ(weak.status, 400);
  EXPECT_EQ(weak.body["error"]["code"], "weak_password");
  EXPECT_EQ(reg({}, "ok@lify.test", "family", "1234567890").status, 201);
  EXPECT_EQ(reg({}, "bad-email", "family").status, 400);
  EXPECT_EQ(reg({}, "x@lify.test", "superuser").status, 400);
  EXPECT_EQ(reg("not-a-token", "y@lify.test", "family").status, 401);
  const auto family = r.call("POST", "/auth/register", {},
                             {{"email", "f@lify.test"}, {"password", kPassword}, {"display_name", "F"}});
  EXPECT_EQ(family.body["role"], "family");
  EXPECT_TRUE(family.body["patient_links"].empty());
  EXPECT_FALSE(family.body.contains("password_hash"));

  // the stored hash is an Argon2id string, never the password
  const auto stored = util::read_file(r.dir / "data" / "accounts.json");
  EXPECT_NE(stored.find("$argon2id$"), std::string::npos);
  EXPECT_EQ(stored.find(kPassword), std::string::npos);
}

TEST(Api, LoginFailuresAreUniformAndRateLimited) {
  ApiRig r;
  r.call("POST", "/auth/register", {},
         {{"email", "a@lify.test"}, {"password", kPassword}, {"role", "admin"}, {"display_name", "A"}});
  const auto wrong = r.call("POST", "/auth/login", {}, {{"email", "a@lify.test"}, {"password", "nope nope nope"}});
  const auto unknown = r.call("POST", "/auth/login", {}, {{"email", "zz@lify.test"}, {"password", "nope nope nope"}});
  EXPECT_EQ(wrong.status, 401);
  EXPECT_EQ(wrong.status, unknown.status);
  EXPECT_EQ(wrong.body, unknown.body);

  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(r.call("POST", "/auth/login", {}, {{"email", "A@lify.test"}, {"password", "still wrong!"}}).status, 401);
  }
  const auto sixth = r.call("POST", "/auth/login", {}, {{"email", "a@lify.test"}, {"password", "still wrong!"}});
  EXPECT_EQ(sixth.status, 429);
  EXPECT_EQ(sixth.body["error"]["code"], "rate_limited");
  EXPECT_TRUE(r.login("a@lify.test").empty());  // limited even with the right password
}

TEST(Api, RateLimitWindowWithManualClock) {
  ManualClock clock;
  AccountStore store({}, clock, KdfCost::minimum());
  store.register_user({}, "a@lify.test", kPassword, Role::Admin, "A");
  for (int i = 0; i < 5; ++i) EXPECT_THROW(store.login("a@lify.test", "wrong password"), Error);
  try {
    store.login("a@lify.test", kPassword);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RateLimited);
  }
  clock.advance(61s);
  const auto s = store.login("a@lify.test", kPassword);
  EXPECT_EQ(s.token.size(), 64u);  // 32 random bytes, hex
  EXPECT_EQ(s.expires_ts_ms - s.issued_ts_ms, 24LL * 3600 * 1000);
  EXPECT_EQ(store.authenticate(s.token).user_id, s.user_id);
  clock.advance(24h);
  EXPECT_THROW(store.authenticate(s.token), Error);
}

TEST(Api, TokensAreInterchangeableAndRevocable) {
  Seeded s;
  const auto second = s.login("son@lify.test");
  ASSERT_NE(second, s.family);
  for (const std::string path : {"/me", "/patients", "/patients/p-ana", "/patients/p-bob", "/alerts"}) {
    const auto a = s.call("GET", path, s.family);
    const auto b = s.call("GET", path, second);
    EXPECT_EQ(a.status, b.status) << path;
    EXPECT_EQ(a.body, b.body) << path;
  }
  EXPECT_EQ(s.call("POST", "/auth/logout", second).status, 204);
  EXPECT_EQ(s.call("GET", "/me", second).status, 401);
  EXPECT_EQ(s.call("GET", "/me", s.family).status, 200);
  EXPECT_EQ(s.call("GET", "/me", s.family + "x").status, 401);
}

TEST(Api, PatientsCrudAndSoftDelete) {
  Seeded s;
  auto bad = Seeded::patient("p-new", "New N.", {});
  bad["birth_date"] = "2999-01-01";
  EXPECT_EQ(s.call("POST", "/patients", s.staff, bad).status, 400);
  bad["birth_date"] = "1941-02-30";
  EXPECT_EQ(s.call("POST", "/patients", s.staff, bad).status, 400);
  EXPECT_EQ(s.call("POST", "/patients", s.staff, Seeded::patient("p-ana", "Dup", {})).status, 409);
  EXPECT_EQ(s.call("POST", "/patients", s.staff, Seeded::patient("p-x", "Takes Device", {"dev-ana"})).status, 409);
  auto unknown_field = Seeded::patient("p-y", "Y", {});
  unknown_field["shoe_size"] = 42;
  EXPECT_EQ(s.call("POST", "/patients", s.staff, unknown_field).status, 400);

  const auto ana = s.call("GET", "/patients/p-ana", s.family).body;
  EXPECT_EQ(ana["medications"][0]["dose"], "5 mg");
  auto edit = Seeded::patient("p-ana", "Ana Pereira", {"dev-ana"});
  edit["notes"] = "prefers tea";
  edit["version"] = ana["version"];
  EXPECT_EQ(s.call("PUT", "/patients/p-ana", s.staff, edit).status, 200);
  EXPECT_EQ(s.call("PUT", "/patients/p-ana", s.staff, edit).status, 409);  // stale version

  const auto t0 = wall_now_ms() - 10'000;
  for (int i = 0; i < 5; ++i) s.ingest("p-ana", "dev-ana", t0 + i * 1000, 36.5);
  EXPECT_EQ(s.call("DELETE", "/patients/p-ana", s.staff).status, 204);
  EXPECT_TRUE(s.call("GET", "/patients", s.family).body["patients"].empty());
  EXPECT_EQ(s.call("GET", "/patients/p-ana", s.family).status, 404);
  const auto history = s.call("GET", "/patients/p-ana/telemetry?metric=temp_c&from=" + std::to_string(t0), s.staff);
  EXPECT_EQ(history.status, 200);
  EXPECT_EQ(history.body["points"].size(), 5u);
  EXPECT_EQ(s.call("GET", "/patients?include_deleted=true", s.staff).body["patients"].size(), 2u);
  EXPECT_EQ(s.call("GET", "/patients", s.staff).body["patients"].size(), 1u);
  // the device is free again once its patient is gone
  EXPECT_EQ(s.call("POST", "/patients", s.staff, Seeded::patient("p-z", "Zed", {"dev-ana"})).status, 201);

  PatientStore reloaded(s.dir / "data");
  EXPECT_TRUE(reloaded.get("p-ana", true)->deleted);
  EXPECT_EQ(reloaded.get("p-ana", true)->notes, "prefers tea");
}

TEST(Api, TelemetryQueries) {
  Seeded s;
  const auto t0 = wall_now_ms() - 100'000;
  for (int i = 0; i < 50; ++i) s.ingest("p-ana", "dev-ana", t0 + i * 1000, 36.0 + i * 0.01);
  const auto q = [&](const std::string& params) {
    return s.call("GET", "/patients/p-ana/telemetry?" + params, s.family);
  };
  const auto all = q("metric=temp_c&from=" + std::to_string(t0));
  ASSERT_EQ(all.status, 200);
  ASSERT_EQ(all.body["points"].size(), 50u);
  EXPECT_EQ(all.body["points"][0]["ts_ms"], t0);
  EXPECT_EQ(all.body["points"][0]["quality"], "ok");
  EXPECT_EQ(q("metric=temp_c&max_points=10&from=" + std::to_string(t0)).body["points"].size(), 10u);
  EXPECT_EQ(q("metric=temp_c&from=10&to=5").status, 400);
  EXPECT_EQ(q("metric=temp_c&max_points=0").status, 400);
  EXPECT_EQ(q("metric=temp_c&max_points=100001").status, 400);
  EXPECT_EQ(q("metric=glucose").status, 400);
  EXPECT_EQ(q("from=1").status, 400);
  EXPECT_EQ(q("metric=temp_c&from=abc").status, 400);
  EXPECT_EQ(s.call("GET", "/patients/p-nobody/telemetry?metric=temp_c", s.staff).status, 404);
  const auto empty = s.call("GET", "/patients/p-bob/telemetry?metric=temp_c", s.staff);
  EXPECT_EQ(empty.status, 200);
  EXPECT_TRUE(empty.body["points"].empty());

  const auto latest = s.call("GET", "/patients/p-ana/latest", s.family).body;
  EXPECT_EQ(latest["latest"]["temp_c"]["ts_ms"], t0 + 49'000);
  EXPECT_EQ(latest["latest"]["temp_c"]["device_id"], "dev-ana");
  EXPECT_FALSE(latest["latest"].contains("hr_bpm"));
}

TEST(Api, RulesTakeEffectForNextSample) {
  Seeded s;
  EXPECT_EQ(s.call("PUT", "/patients/p-ana/rules", s.staff, {{"metric", "temp_c"}, {"min", 40}, {"max", 38}}).status,
            400);
  EXPECT_EQ(s.call("PUT", "/patients/p-ana/rules", s.staff, {{"metric", "temp_c"}, {"min", 35}}).status, 400);
  EXPECT_EQ(s.call("PUT", "/patients/p-ana/rules", s.staff,
                   {{"rules", {{{"metric", "temp_c"}, {"min", 35}, {"max", 37}, {"debounce_n", 1}},
                               {{"metric", "bogus"}, {"min", 1}, {"max", 2}}}}})
                .status,
            400);
  EXPECT_EQ(s.alerts.rule("p-ana", MetricKind::TempC).max, 38.0);  // nothing applied from the bad batch

  const auto t0 = wall_now_ms() - 60'000;
  s.ingest("p-ana", "dev-ana", t0, 37.5);
  EXPECT_TRUE(s.alerts.list().empty());
  const auto put = s.call("PUT", "/patients/p-ana/rules", s.staff,
                          {{"metric", "temp_c"}, {"min", 35}, {"max", 37}, {"debounce_n", 1}, {"severity", "critical"}});
  ASSERT_EQ(put.status, 200);
  EXPECT_EQ(put.body["rules"][0]["max"], 37.0);
  EXPECT_TRUE(s.alerts.list().empty());  // no retroactive evaluation
  s.ingest("p-ana", "dev-ana", t0 + 1000, 37.5);
  ASSERT_EQ(s.alerts.list().size(), 1u);
  EXPECT_EQ(s.alerts.list()[0].severity, Severity::Critical);
}

TEST(Api, AlertsEndpoints) {
  Seeded s;
  const auto created = s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", "patient fell"}});
  ASSERT_EQ(created.status, 201);
  EXPECT_EQ(created.body["source"], "manual");
  EXPECT_EQ(created.body["severity"], "warning");
  EXPECT_EQ(created.body["raised_by_name"], "Nurse J.");
  EXPECT_EQ(s.call("POST", "/alerts", s.staff, {{"patient_id", "p-bob"}, {"message", "wandering"}}).status, 201);
  EXPECT_EQ(s.call("POST", "/alerts", s.staff, {{"patient_id", "p-nobody"}, {"message", "x"}}).status, 404);
  EXPECT_EQ(s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", ""}}).status, 400);
  EXPECT_EQ(
      s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", std::string(501, 'x')}}).status, 400);
  EXPECT_EQ(s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", "x"}, {"severity", "info"}}).status,
            400);

  EXPECT_EQ(s.call("GET", "/alerts", s.staff).body["alerts"].size(), 2u);
  const auto fam = s.call("GET", "/alerts", s.family).body["alerts"];
  ASSERT_EQ(fam.size(), 1u);
  EXPECT_EQ(fam[0]["patient_id"], "p-ana");
  EXPECT_TRUE(s.call("GET", "/alerts", s.stranger).body["alerts"].empty());
  const auto id = created.body["alert_id"].get<std::string>();
  const auto acked = s.call("POST", "/alerts/" + id + "/ack", s.staff);
  EXPECT_EQ(acked.body["state"], "acked");
  EXPECT_EQ(s.call("GET", "/alerts?state=open", s.staff).body["alerts"].size(), 1u);
  EXPECT_EQ(s.call("GET", "/alerts?state=acked&patient_id=p-ana", s.family).body["alerts"].size(), 1u);
  EXPECT_EQ(s.call("GET", "/alerts?state=bogus", s.staff).status, 400);
}

TEST(Api, ManualAlertReachesBoundChat) {
  Seeded s;
  const auto code = s.call("POST", "/notify/bind-code", s.family, {{"chat_id", "777"}});
  ASSERT_EQ(code.status, 201);
  EXPECT_EQ(s.call("GET", "/notify/binding", s.family).body["binding"]["verified"], false);
  EXPECT_EQ(s.call("POST", "/notify/bind", s.family, {{"chat_id", "777"}, {"code", "x"}}).status, 400);
  const auto bound = s.call("POST", "/notify/bind", s.family, {{"chat_id", "777"}, {"code", code.body["code"]}});
  ASSERT_EQ(bound.status, 200);
  EXPECT_EQ(bound.body["verified"], true);

  // the stranger binds too but is not linked to the patient
  const auto c2 = s.call("POST", "/notify/bind-code", s.stranger).body["code"];
  EXPECT_EQ(s.call("POST", "/notify/bind", s.stranger, {{"chat_id", "888"}, {"code", c2}}).status, 200);

  ASSERT_EQ(s.call("POST", "/alerts", s.staff,
                   {{"patient_id", "p-ana"}, {"message", "patient fell"}, {"severity", "critical"}})
                .status,
            201);
  ASSERT_TRUE(lify::testing::eventually([&] { return !s.mock.sent_to("777").empty(); }));
  EXPECT_EQ(s.mock.sent_to("777")[0].text, "[CRITICAL] Ana P.: patient fell — raised by Nurse J.");
  EXPECT_TRUE(s.notifier.wait_idle(5s));
  EXPECT_TRUE(s.mock.sent_to("888").empty());

  EXPECT_EQ(s.call("PUT", "/me/notify", s.family, {{"enabled", false}}).status, 200);
  s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", "again"}});
  EXPECT_TRUE(s.notifier.wait_idle(5s));
  EXPECT_EQ(s.mock.sent_to("777").size(), 1u);
}

TEST(ApiStream, SamplesAndAlertsArriveQuickly) {
  Seeded s;
  SseReader all(s.base, "/api/v1/stream", s.staff);
  SseReader mine(s.base, "/api/v1/stream", s.family);
  SseReader filtered(s.base, "/api/v1/stream?patient_id=p-bob", s.staff);
  ASSERT_EQ(all.wait_status(), 200);
  ASSERT_EQ(mine.wait_status(), 200);
  ASSERT_EQ(filtered.wait_status(), 200);
  ASSERT_TRUE(lify::testing::eventually([&] { return s.server->hub().client_count() == 3; }));

  const auto sent_at = std::chrono::steady_clock::now();
  s.ingest("p-ana", "dev-ana", wall_now_ms(), 36.6);
  ASSERT_TRUE(all.wait_for(1, "sample"));
  ASSERT_TRUE(mine.wait_for(1, "sample"));
  EXPECT_LT(all.of_type("sample")[0].at - sent_at, 1s);
  const auto data = Json::parse(all.of_type("sample")[0].data);
  EXPECT_EQ(data["metric"], "temp_c");
  EXPECT_EQ(data["value"], 36.6);
  EXPECT_EQ(data["quality"], "ok");
  EXPECT_FALSE(all.of_type("sample")[0].id.empty());

  s.ingest("p-bob", "dev-bob", wall_now_ms(), 36.7);
  ASSERT_TRUE(filtered.wait_for(1, "sample"));
  ASSERT_TRUE(all.wait_for(2, "sample"));
  EXPECT_EQ(mine.of_type("sample").size(), 1u);  // family never sees p-bob
  EXPECT_EQ(filtered.of_type("sample").size(), 1u);

  s.call("POST", "/alerts", s.staff, {{"patient_id", "p-ana"}, {"message", "patient fell"}});
  ASSERT_TRUE(mine.wait_for(1, "alert"));
  EXPECT_EQ(Json::parse(mine.of_type("alert")[0].data)["alert"]["message"], "patient fell");
  EXPECT_TRUE(all.wait_for(1, "heartbeat"));
}

TEST(ApiStream, AccessRules) {
  Seeded s;
  SseReader anon(s.base, "/api/v1/stream", "");
  EXPECT_EQ(anon.wait_status(), 401);
  SseReader unlinked(s.base, "/api/v1/stream?patient_id=p-bob", s.family);
  EXPECT_EQ(unlinked.wait_status(), 403);
  httplib::Client cli(s.base);
  const auto r = cli.Get("/api/v1/stream?patient_id=p-ana&access_token=" + s.family,
                         [](const char*, std::size_t) { return false; });
  EXPECT_EQ(r.error(), httplib::Error::Canceled);  // stream opened, then the client hung up
}

TEST(ApiStream, ResumeWithLastEventId) {
  Seeded s;
  EventBus bus;
  StreamHub hub(bus, 4, 16);
  for (int i = 0; i < 6; ++i) bus.publish(SampleEvent{VitalSample{"p-1", "d", MetricKind::TempC, 36.0 + i, i, Quality::Ok}});
  // ids 3..6 are still in the ring
  auto resume = hub.open(nullptr, 4);
  auto ev = resume->next(100ms);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].id, 5u);
  EXPECT_EQ(ev[1].id, 6u);
  auto late = hub.open(nullptr, 1);
  ev = late->next(100ms);
  ASSERT_EQ(ev.size(), 5u);
  EXPECT_EQ(ev[0].type, "gap");
  EXPECT_EQ(Json::parse(ev[0].data)["from_id"], 2);
  EXPECT_EQ(Json::parse(ev[0].data)["to_id"], 2);
  EXPECT_EQ(ev[1].id, 3u);

  // and over HTTP
  for (int i = 0; i < 3; ++i) s.ingest("p-ana", "dev-ana", wall_now_ms() + i, 36.0);
  const auto last = s.server->hub().last_id();
  SseReader r(s.base, "/api/v1/stream", s.staff, std::to_string(last - 1));
  ASSERT_TRUE(r.wait_for(1, "sample"));
  EXPECT_EQ(r.of_type("sample")[0].id, std::to_string(last));
}

TEST(ApiStream, SlowConsumerIsDisconnected) {
  EventBus bus;
  StreamHub hub(bus, 8, 3);
  auto slow = hub.open(nullptr);
  auto fast = hub.open(nullptr);
  for (int i = 0; i < 3; ++i) bus.publish(SampleEvent{VitalSample{"p-1", "d", MetricKind::TempC, 36.0, i, Quality::Ok}});
  EXPECT_EQ(fast->next(10ms).size(), 3u);
  bus.publish(SampleEvent{VitalSample{"p-1", "d", MetricKind::TempC, 36.0, 9, Quality::Ok}});
  EXPECT_TRUE(slow->closed());
  EXPECT_TRUE(slow->overflowed());
  EXPECT_FALSE(fast->closed());
  EXPECT_EQ(hub.client_count(), 1u);
}
