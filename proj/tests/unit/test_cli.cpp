#include <gtest/gtest.h>
#include <httplib.h>

#include <fstream>
#include <sstream>

#include "lify/agent.hpp"
#include "lify/mqtt/broker.hpp"
#include "lify/util.hpp"
#include "process.hpp"
#include "test_support.hpp"

using namespace lify;
using namespace std::chrono_literals;
using lify::testing::ChildProcess;
using lify::testing::TempDir;
using Json = nlohmann::json;

namespace {

std::vector<std::string> lify_args(std::initializer_list<std::string> rest) {
  std::vector<std::string> v{LIFY_BIN};
  v.insert(v.end(), rest);
  return v;
}

int run(std::initializer_list<std::string> args, const TempDir& dir, std::string* out = nullptr,
        const std::vector<std::string>& env = {}) {
  ChildProcess p(lify_args(args), dir / "stderr.log", env);
  auto text = p.read_all(120s);
  if (out) *out = std::move(text);
  return p.wait(120s).value_or(-1);
}

std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

struct TlsBroker {
  mqtt::Broker broker{[] {
    mqtt::BrokerOptions o;
    o.cert_path = lify::testing::dev_certs().server_cert;
    o.key_path = lify::testing::dev_certs().server_key;
    return o;
  }()};
  TlsBroker() { broker.start(); }
  std::string url() const { return "mqtts://127.0.0.1:" + std::to_string(broker.port()); }
};

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  TempDir dir("lify-cli");
  EXPECT_EQ(run({}, dir), 1);
  EXPECT_EQ(run({"frobnicate"}, dir), 1);
  EXPECT_EQ(run({"serve", "--no-such-flag"}, dir), 1);
  EXPECT_EQ(run({"simulate", "--devices", "0"}, dir), 1);
  EXPECT_EQ(run({"seed"}, dir), 1);
  EXPECT_EQ(run({"scenario", (dir / "missing.json").string()}, dir), 1);
  EXPECT_EQ(run({"serve", "--only", "gateway,teapot"}, dir), 1);
  EXPECT_EQ(run({"--help"}, dir), 0);
}

TEST(Cli, ServeAnswersHealthAndStopsCleanly) {
  TempDir dir("lify-cli");
  ChildProcess p(lify_args({"serve", "--data-root", (dir / "data").string(), "--listen", "127.0.0.1:0",
                            "--broker-listen", "127.0.0.1:0"}),
                 dir / "stderr.log");
  const auto line = p.read_line(30s);
  ASSERT_TRUE(line.has_value()) << util::read_file(dir / "stderr.log");
  const auto ready = Json::parse(*line);
  EXPECT_EQ(ready["event"], "ready");
  ASSERT_TRUE(ready.contains("api"));
  EXPECT_TRUE(ready["broker"].get<std::string>().starts_with("mqtts://"));

  httplib::Client cli(ready["api"].get<std::string>());
  const auto res = cli.Get("/api/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(Json::parse(res->body)["status"], "ok");

  p.kill(SIGTERM);
  EXPECT_EQ(p.wait(30s), 0);
}

TEST(Cli, MissingCaFileIsFatalAndNamed) {
  TempDir dir("lify-cli");
  const auto ca = (dir / "nowhere" / "ca.pem").string();
  EXPECT_EQ(run({"serve", "--only", "gateway", "--broker-url", "mqtts://127.0.0.1:8883", "--tls-ca", ca,
                 "--data-root", (dir / "data").string()},
                dir),
            1);
  EXPECT_NE(util::read_file(dir / "stderr.log").find(ca), std::string::npos);
}

TEST(Cli, ProdProfileRefusesPlainHttp) {
  TempDir dir("lify-cli");
  EXPECT_EQ(run({"serve", "--only", "api", "--prod", "--listen", "127.0.0.1:0", "--data-root", (dir / "data").string()},
                dir),
            1);
  EXPECT_NE(util::read_file(dir / "stderr.log").find("tls_required"), std::string::npos);
}

TEST(Cli, OnlyGatewayIngestsWithoutApi) {
  TempDir dir("lify-cli");
  TlsBroker b;
  const auto data = dir / "data";
  ChildProcess p(lify_args({"serve", "--only", "gateway", "--broker-url", b.url(), "--tls-ca",
                            lify::testing::dev_certs().ca_cert.string(), "--data-root", data.string()}),
                 dir / "stderr.log");
  const auto line = p.read_line(30s);
  ASSERT_TRUE(line.has_value()) << util::read_file(dir / "stderr.log");
  const auto ready = Json::parse(*line);
  EXPECT_FALSE(ready.contains("api"));
  EXPECT_FALSE(ready.contains("broker"));

  AgentConfig a;
  a.broker_url = b.url();
  a.ca_path = lify::testing::dev_certs().ca_cert;
  a.period_ms = 50;
  a.max_cycles = 5;
  a.start_ms = wall_now_ms() - 10'000;
  DeviceAgent agent(a);
  agent.run();

  // Ingestion is active: 5 envelopes x 3 metrics land in the patient's segment.
  const auto seg_dir = data / "telemetry" / a.patient_id;
  EXPECT_TRUE(lify::testing::eventually([&] {
    if (!std::filesystem::exists(seg_dir)) return false;
    std::size_t records = 0;
    for (const auto& f : std::filesystem::directory_iterator(seg_dir)) {
      std::ifstream in(f.path());
      for (std::string l; std::getline(in, l);) records += l.find("\"segment\"") == std::string::npos;
    }
    return records == 15;
  }));
  p.kill(SIGTERM);
  EXPECT_EQ(p.wait(30s), 0);
}

TEST(Cli, SimulateIsReproducibleForAFixedSeed) {
  TempDir dir("lify-cli");
  TlsBroker b;
  const auto ca = lify::testing::dev_certs().ca_cert.string();
  std::string out1, out2;
  ASSERT_EQ(run({"simulate", "-n", "2", "--period", "100ms", "--duration", "2s", "--seed", "5", "--start-ms",
                 "1700000000000", "--broker-url", b.url(), "--tls-ca", ca, "--anomaly", "dev-02:temp_c=39.5@500ms+1s",
                 "--record", (dir / "a.ndjson").string()},
                dir, &out1),
            0);
  ASSERT_EQ(run({"simulate", "-n", "2", "--period", "100ms", "--duration", "2s", "--seed", "5", "--start-ms",
                 "1700000000000", "--broker-url", b.url(), "--tls-ca", ca, "--anomaly", "dev-02:temp_c=39.5@500ms+1s",
                 "--record", (dir / "b.ndjson").string()},
                dir, &out2),
            0);
  const auto a = util::read_file(dir / "a.ndjson");
  const auto bb = util::read_file(dir / "b.ndjson");
  // Two agents interleave differently; compare per-device streams.
  const auto per_device = [](const std::string& text) {
    std::map<std::string, std::vector<std::string>> m;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) m[Json::parse(l)["device_id"]].push_back(l);
    return m;
  };
  const auto da = per_device(a);
  EXPECT_EQ(da, per_device(bb));
  ASSERT_EQ(da.size(), 2u);
  EXPECT_EQ(da.at("dev-01").size(), 20u);
  EXPECT_GT(Json::parse(da.at("dev-02")[6])["metrics"]["temp_c"].get<double>(), 39.0) << da.at("dev-02")[6];
  EXPECT_LT(Json::parse(da.at("dev-02")[0])["metrics"]["temp_c"].get<double>(), 38.0) << da.at("dev-02")[0];

  const auto stats = json_lines(out1);
  ASSERT_EQ(stats.size(), 2u);
  for (const auto& s : stats) {
    EXPECT_EQ(s["generated"], 20);
    EXPECT_EQ(s["published"], 20);
  }
}

TEST(Cli, SimulateRefusesPlaintextWhenTlsRequired) {
  TempDir dir("lify-cli");
  EXPECT_EQ(run({"simulate", "--broker-url", "mqtt://127.0.0.1:1883", "--duration", "1s"}, dir), 1);
  EXPECT_NE(util::read_file(dir / "stderr.log").find("plaintext"), std::string::npos);
}

TEST(Cli, SeedIsIdempotentAndPrintsCredentialsOnce) {
  TempDir dir("lify-cli");
  const auto data = (dir / "data").string();
  std::string first;
  ASSERT_EQ(run({"seed", "demo", "--data-root", data}, dir, &first), 0) << util::read_file(dir / "stderr.log");
  std::string admin_pw;
  int users_created = 0;
  for (const auto& j : json_lines(first)) {
    if (j.value("created", "") == "user") {
      ++users_created;
      if (j["role"] == "admin") admin_pw = j["password"];
    }
  }
  EXPECT_EQ(users_created, 5);
  ASSERT_FALSE(admin_pw.empty());

  std::string second;
  ASSERT_EQ(run({"seed", "demo", "--data-root", data}, dir, &second, {"LIFY_ADMIN_PASSWORD=" + admin_pw}), 0)
      << util::read_file(dir / "stderr.log");
  EXPECT_EQ(second.find("password"), std::string::npos) << second;

  const auto accounts = Json::parse(util::read_file(dir / "data" / "accounts.json"));
  const auto patients = Json::parse(util::read_file(dir / "data" / "patients.json"));
  EXPECT_EQ(accounts["users"].size(), 5u);
  EXPECT_EQ(patients["patients"].size(), 3u);
  int roles[3] = {0, 0, 0};
  for (const auto& u : accounts["users"]) {
    const auto r = u["role"].get<std::string>();
    ++roles[r == "admin" ? 0 : r == "staff" ? 1 : 2];
  }
  EXPECT_EQ(roles[0], 1);
  EXPECT_EQ(roles[1], 2);
  EXPECT_EQ(roles[2], 2);
  const auto rules = Json::parse(util::read_file(dir / "data" / "rules.json"));
  EXPECT_EQ(rules["rules"].size(), 9u);
}

TEST(Cli, SeedAgainstRunningServerIsVisibleImmediately) {
  TempDir dir("lify-cli");
  ChildProcess server(lify_args({"serve", "--only", "api", "--data-root", (dir / "data").string(), "--listen",
                                 "127.0.0.1:0"}),
                      dir / "server.log");
  const auto line = server.read_line(30s);
  ASSERT_TRUE(line.has_value()) << util::read_file(dir / "server.log");
  const auto api = Json::parse(*line)["api"].get<std::string>();

  std::string out;
  ASSERT_EQ(run({"seed", "--api", api}, dir, &out), 0) << util::read_file(dir / "stderr.log");
  std::string nurse_pw;
  for (const auto& j : json_lines(out)) {
    if (j.value("email", "") == "nurse.joana@lify.local") nurse_pw = j["password"];
  }
  httplib::Client cli(api);
  const auto login = cli.Post("/api/v1/auth/login", Json{{"email", "nurse.joana@lify.local"}, {"password", nurse_pw}}.dump(),
                              "application/json");
  ASSERT_TRUE(login);
  ASSERT_EQ(login->status, 200);
  const auto token = Json::parse(login->body)["token"].get<std::string>();
  const auto list = cli.Get("/api/v1/patients", {{"Authorization", "Bearer " + token}});
  ASSERT_TRUE(list);
  EXPECT_EQ(Json::parse(list->body)["patients"].size(), 3u);
  server.kill(SIGTERM);
  EXPECT_EQ(server.wait(30s), 0);
}

TEST(Cli, CertsWritesDevelopmentCa) {
  TempDir dir("lify-cli");
  std::string out;
  ASSERT_EQ(run({"certs", "--out", (dir / "pki").string()}, dir, &out), 0);
  const auto j = Json::parse(out);
  EXPECT_TRUE(std::filesystem::exists(j["ca_cert"].get<std::string>()));
  EXPECT_TRUE(std::filesystem::exists(j["server_key"].get<std::string>()));
}
