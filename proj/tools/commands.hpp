#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lify::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Set by SIGINT/SIGTERM.
extern std::atomic<bool> g_interrupted;
void install_signal_handlers();

struct ServeOptions {
  std::filesystem::path config;
  std::string only;
  std::optional<std::string> listen;
  std::optional<std::string> data_root;
  std::optional<std::string> tls_cert;
  std::optional<std::string> tls_key;
  bool prod = false;
  std::optional<std::string> broker_url;
  std::optional<std::string> broker_listen;
  std::optional<std::string> tls_ca;
  std::optional<bool> tls_required;
  std::optional<std::string> static_dir;
  std::optional<std::string> notifier;
};
int cmd_serve(const ServeOptions& o);

struct SimulateOptions {
  std::filesystem::path config;
  int devices = 1;
  std::optional<std::string> period;
  std::optional<std::string> duration;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> anomalies;
  std::optional<std::string> broker_url;
  std::optional<std::string> tls_ca;
  std::optional<bool> tls_required;
  std::optional<std::int64_t> start_ms;
  std::filesystem::path record;
};
int cmd_simulate(const SimulateOptions& o);

struct SeedOptions {
  std::string profile = "demo";
  std::string api;
  std::string api_ca;
  std::filesystem::path data_root;
  std::string admin_email = "admin@lify.local";
};
int cmd_seed(const SeedOptions& o);

struct ScenarioOptionsCli {
  std::filesystem::path file;
  std::filesystem::path data_root;
  bool json = false;
};
int cmd_scenario(const ScenarioOptionsCli& o);

int cmd_certs(const std::filesystem::path& out);

}  // namespace lify::cli
