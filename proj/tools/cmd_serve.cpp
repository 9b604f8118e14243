#include <spdlog/spdlog.h>

#include <iostream>
#include <thread>

#include "commands.hpp"
#include "lify/app.hpp"
#include "lify/scenario.hpp"

namespace lify::cli {

int cmd_serve(const ServeOptions& o) {
  auto cfg = o.config.empty() ? StackConfig{} : StackConfig::load(o.config);
  if (o.broker_url) {
    // An external broker replaces the embedded one unless --only says otherwise.
    cfg.gateway.broker_url = *o.broker_url;
    cfg.services.erase("broker");
  }
  if (!o.only.empty()) cfg.services = StackConfig::parse_services(o.only);
  if (o.broker_listen) cfg.broker.listen = *o.broker_listen;
  if (o.tls_ca) cfg.gateway.ca_path = *o.tls_ca;
  if (o.tls_required) cfg.gateway.tls_required = *o.tls_required;
  if (o.listen) cfg.api.listen = *o.listen;
  if (o.data_root) cfg.data_root = *o.data_root;
  if (o.tls_cert) cfg.api.tls_cert = *o.tls_cert;
  if (o.tls_key) cfg.api.tls_key = *o.tls_key;
  if (o.prod) cfg.api.tls_required = true;
  if (o.static_dir) cfg.api.static_dir = *o.static_dir;
  if (o.notifier) cfg.notifier.transport = *o.notifier;
  cfg.gateway.apply_env();

  install_signal_handlers();
  Stack stack(cfg);
  stack.start();
  std::cout << stack.describe().dump() << std::endl;

  int rc = kExitOk;
  while (!g_interrupted) {
    const auto fatal = stack.fatal_error();
    if (!fatal.empty()) {
      spdlog::error("serve: {}", fatal);
      rc = kExitRuntime;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  spdlog::info("serve: shutting down");
  stack.stop();
  return rc;
}

int cmd_scenario(const ScenarioOptionsCli& o) {
  const auto script = ScenarioScript::load(o.file);
  ScenarioOptions opts;
  opts.data_root = o.data_root;
  opts.log = [](const std::string& line) { spdlog::info("scenario: {}", line); };
  const auto report = run_scenario(script, opts);
  if (o.json) {
    std::cout << report.to_json().dump(2) << std::endl;
  } else {
    for (const auto& e : report.expectations) {
      std::cout << (e.passed ? "PASS " : "FAIL ") << e.description << ": " << e.detail << "\n";
    }
    for (const auto& [dev, st] : report.agents) {
      std::cout << "agent " << dev << ": generated=" << st.generated << " published=" << st.published
                << " dropped=" << st.dropped << "\n";
    }
    std::cout << (report.passed() ? "scenario passed" : "scenario FAILED") << std::endl;
  }
  return report.passed() ? kExitOk : kExitRuntime;
}

int cmd_certs(const std::filesystem::path& out) {
  net::init();
  const auto c = net::ensure_dev_certificates(out);
  nlohmann::json j{{"ca_cert", c.ca_cert.string()},
                   {"ca_key", c.ca_key.string()},
                   {"server_cert", c.server_cert.string()},
                   {"server_key", c.server_key.string()}};
  std::cout << j.dump() << std::endl;
  return kExitOk;
}

}  // namespace lify::cli
