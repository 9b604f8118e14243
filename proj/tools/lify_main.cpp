#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

#include "commands.hpp"
#include "lify/error.hpp"

namespace lify::cli {

std::atomic<bool> g_interrupted{false};

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = [](int) { g_interrupted = true; };
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

}  // namespace lify::cli

int main(int argc, char** argv) {
  using namespace lify::cli;
  // stdout carries machine-readable output; logs go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("lify"));

  CLI::App app{"lify: vital-signs monitoring for care homes"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "trace|debug|info|warn|error|off")->capture_default_str();

  ServeOptions serve;
  auto* s = app.add_subcommand("serve", "Run broker, gateway, alert engine, notifier and API in one process");
  s->add_option("-c,--config", serve.config, "Stack config file (JSON)");
  s->add_option("--only", serve.only, "Comma-separated subset of broker,gateway,alerts,notifier,api");
  s->add_option("--listen", serve.listen, "API listen address host:port");
  s->add_option("--data-root", serve.data_root, "Directory for all persistent state");
  s->add_option("--tls-cert", serve.tls_cert, "API TLS certificate (PEM)");
  s->add_option("--tls-key", serve.tls_key, "API TLS private key (PEM)");
  s->add_flag("--prod", serve.prod, "Production profile: refuse to serve the API without TLS");
  s->add_option("--broker-url", serve.broker_url, "External broker for the gateway (mqtts://host:port)");
  s->add_option("--broker-listen", serve.broker_listen, "Embedded broker listen address host:port");
  s->add_option("--tls-ca", serve.tls_ca, "CA the gateway trusts for the broker");
  s->add_option("--tls-required", serve.tls_required, "Refuse plaintext MQTT (default true)");
  s->add_option("--static-dir", serve.static_dir, "Dashboard bundle served at /");
  s->add_option("--notifier", serve.notifier, "mock|telegram");

  SimulateOptions sim;
  auto* m = app.add_subcommand("simulate", "Run a fleet of simulated bedside devices");
  m->add_option("-c,--config", sim.config, "Config file; its \"agent\" section is the per-device template");
  m->add_option("-n,--devices", sim.devices, "Number of devices")->check(CLI::Range(1, 1000))->capture_default_str();
  m->add_option("--period", sim.period, "Acquisition period, e.g. 1s or 500ms");
  m->add_option("--duration", sim.duration, "Run time, e.g. 60s; unset runs until interrupted");
  m->add_option("--seed", sim.seed, "Fleet seed");
  m->add_option("--anomaly", sim.anomalies, "[device:]metric=value@start+duration, repeatable");
  m->add_option("--broker-url", sim.broker_url, "mqtts://host:port");
  m->add_option("--tls-ca", sim.tls_ca, "CA that signed the broker certificate");
  m->add_option("--tls-required", sim.tls_required, "Refuse plaintext MQTT (default true)");
  m->add_option("--start-ms", sim.start_ms, "Timestamp of the first cycle, for reproducible runs");
  m->add_option("--record", sim.record, "Write every generated envelope to this ndjson file");

  SeedOptions seed;
  auto* d = app.add_subcommand("seed", "Create demo users, patients and rules (idempotent)");
  d->add_option("profile", seed.profile, "Fixture profile")->check(CLI::IsMember({"demo"}))->capture_default_str();
  auto* api_opt = d->add_option("--api", seed.api, "Base URL of a running server, e.g. http://127.0.0.1:8080");
  d->add_option("--api-ca", seed.api_ca, "CA bundle for an https API");
  d->add_option("--data-root", seed.data_root, "Seed a stopped server's data directory instead")->excludes(api_opt);
  d->add_option("--admin-email", seed.admin_email, "Admin account used for seeding")->capture_default_str();

  ScenarioOptionsCli scen;
  auto* c = app.add_subcommand("scenario", "Run a scripted end-to-end scenario");
  c->add_option("file", scen.file, "Scenario JSON")->required();
  c->add_option("--data-root", scen.data_root, "Keep the run's state here instead of a temporary directory");
  c->add_flag("--json", scen.json, "Print the report as JSON");

  std::filesystem::path certs_out = "certs";
  auto* t = app.add_subcommand("certs", "Write a development CA and localhost server certificate");
  t->add_option("--out", certs_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(level));

  try {
    if (*s) return cmd_serve(serve);
    if (*m) return cmd_simulate(sim);
    if (*d) {
      if (seed.api.empty() && seed.data_root.empty()) {
        std::cerr << "seed: one of --api or --data-root is required\n";
        return kExitUsage;
      }
      return cmd_seed(seed);
    }
    if (*c) return cmd_scenario(scen);
    if (*t) return cmd_certs(certs_out);
  } catch (const lify::Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == lify::ErrorCode::ConfigError ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
