#include "lify/api.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "lify/config_util.hpp"
#include "lify/error.hpp"

namespace lify {

namespace fs = std::filesystem;
using httplib::Request;
using httplib::Response;
using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

namespace {

void send_json(Response& res, int status, const OJson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, ErrorCode code, const std::string& message) {
  OJson e;
  e["error"]["code"] = to_string(code);
  e["error"]["message"] = message;
  send_json(res, http_status(code), e);
}

Json body_json(const Request& req) {
  if (req.body.empty()) return Json::object();
  auto j = Json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ValidationError, "request body is not valid JSON");
  if (!j.is_object()) throw Error(ErrorCode::ValidationError, "request body must be a JSON object");
  return j;
}

template <typename T>
T field(const Json& j, const std::string& key) {
  if (!j.contains(key)) throw Error(ErrorCode::ValidationError, "missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::ValidationError, "invalid value for '" + key + "'");
  }
}

std::int64_t int_param(const Request& req, const std::string& key, std::int64_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const auto n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(key);
    return n;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ValidationError, "query parameter '" + key + "' must be an integer");
  }
}

std::string bearer(const Request& req) {
  const auto h = req.get_header_value("Authorization");
  static constexpr std::string_view kPrefix = "Bearer ";
  if (h.size() > kPrefix.size() && std::string_view(h).substr(0, kPrefix.size()) == kPrefix) {
    return h.substr(kPrefix.size());
  }
  return {};
}

OJson record_json(const StoredRecord& r) {
  OJson j;
  j["ts_ms"] = r.ts_ms;
  j["value"] = r.value;
  j["quality"] = quality_code(r.quality);
  return j;
}

std::pair<std::string, int> split_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "api.listen must be host:port, got " + listen);
  try {
    const int port = std::stoi(listen.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    return {listen.substr(0, colon), port};
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "api.listen has a bad port: " + listen);
  }
}

}  // namespace

ApiConfig ApiConfig::from_json(const nlohmann::json& j) {
  static constexpr std::string_view kSection = "api";
  config::require_keys(j,
                       {"listen", "tls_cert", "tls_key", "tls_required", "static_dir", "stream_queue", "stream_replay",
                        "heartbeat", "threads"},
                       kSection);
  ApiConfig c;
  config::read(j, "listen", c.listen, kSection);
  if (j.contains("tls_cert")) c.tls_cert = j.at("tls_cert").get<std::string>();
  if (j.contains("tls_key")) c.tls_key = j.at("tls_key").get<std::string>();
  config::read(j, "tls_required", c.tls_required, kSection);
  if (j.contains("static_dir")) c.static_dir = j.at("static_dir").get<std::string>();
  config::read(j, "stream_queue", c.stream_queue, kSection);
  config::read(j, "stream_replay", c.stream_replay, kSection);
  if (j.contains("heartbeat")) c.heartbeat_ms = config::duration_ms(j.at("heartbeat"), "api.heartbeat");
  config::read(j, "threads", c.threads, kSection);
  return c;
}

void ApiConfig::validate() const {
  split_listen(listen);
  if (tls_cert.empty() != tls_key.empty()) throw Error(ErrorCode::ConfigError, "api.tls_cert and api.tls_key go together");
  if (tls_required && tls_cert.empty()) {
    throw Error(ErrorCode::ConfigError, "api.tls_required is set but no tls_cert/tls_key were given");
  }
  for (const auto& p : {tls_cert, tls_key}) {
    if (!p.empty() && !fs::exists(p)) throw Error(ErrorCode::ConfigError, "api TLS file not found: " + p.string());
  }
  if (threads < 2) throw Error(ErrorCode::ConfigError, "api.threads must be at least 2");
  if (heartbeat_ms <= 0) throw Error(ErrorCode::ConfigError, "api.heartbeat must be positive");
}

std::vector<std::string> AccountDirectory::recipients(const std::string& patient_id) const {
  return accounts_.linked_users(patient_id);
}

std::string AccountDirectory::patient_name(const std::string& patient_id) const {
  const auto p = patients_.get(patient_id, true);
  return p ? p->name : patient_id;
}

ApiServer::ApiServer(ApiConfig config, ApiDeps deps)
    : config_(std::move(config)), deps_(deps), hub_(deps.bus, config_.stream_replay, config_.stream_queue) {}

ApiServer::~ApiServer() { stop(); }

std::string ApiServer::base_url() const {
  const auto [host, port] = split_listen(config_.listen);
  return std::string(config_.tls_cert.empty() ? "http://" : "https://") + host + ":" + std::to_string(port_);
}

void ApiServer::start() {
  config_.validate();
  if (!config_.tls_cert.empty()) {
    server_ = std::make_unique<httplib::SSLServer>(config_.tls_cert.string().c_str(), config_.tls_key.string().c_str());
    if (!server_->is_valid()) throw Error(ErrorCode::ConfigError, "cannot load API TLS certificate/key");
  } else {
    server_ = std::make_unique<httplib::Server>();
  }
  const int threads = config_.threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  server_->set_payload_max_length(1 << 20);
  routes();
  if (!config_.static_dir.empty()) {
    if (!server_->set_mount_point("/", config_.static_dir.string())) {
      throw Error(ErrorCode::ConfigError, "api.static_dir not found: " + config_.static_dir.string());
    }
  }
  const auto [host, port] = split_listen(config_.listen);
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::ConfigError, "cannot listen on " + config_.listen);
  stopping_ = false;
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  spdlog::info("api: serving {}/api/v1", base_url());
}

void ApiServer::stop() {
  stopping_ = true;
  hub_.shutdown();
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ApiServer::routes() {
  auto& srv = *server_;
  const ApiDeps d = deps_;

  // Every handler runs inside this wrapper: errors become the JSON error body.
  const auto wrap = [](auto fn) {
    return [fn](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const Json::exception& e) {
        send_error(res, ErrorCode::ValidationError, e.what());
      } catch (const std::exception& e) {
        spdlog::error("api: {} {} failed: {}", req.method, req.path, e.what());
        OJson j;
        j["error"]["code"] = "internal";
        j["error"]["message"] = "internal error";
        send_json(res, 500, j);
      }
    };
  };
  srv.set_error_handler([](const Request&, Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    if (res.status == 404) send_error(res, ErrorCode::NotFound, "no such endpoint");
    return httplib::Server::HandlerResponse::Handled;
  });

  const auto auth = [d](const Request& req) { return d.accounts.authenticate(bearer(req)); };
  const auto require_staff = [](const Actor& a) {
    if (!a.is_staff_or_admin()) throw Error(ErrorCode::Forbidden, "staff or admin role required");
  };
  const auto links_of = [d](const Actor& a) {
    const auto u = d.accounts.get(a.user_id);
    return u ? u->patient_links : std::set<std::string>{};
  };
  // Existence first (staff also see soft-deleted patients when reading),
  // then the family link check.
  const auto require_patient = [d, links_of](const Actor& a, const std::string& id, bool write) {
    const bool include_deleted = a.is_staff_or_admin() && !write;
    auto p = d.patients.get(id, include_deleted);
    if (!p) throw Error(ErrorCode::NotFound, "no patient " + id);
    if (!a.is_staff_or_admin() && !links_of(a).contains(id)) {
      throw Error(ErrorCode::Forbidden, "not linked to patient " + id);
    }
    return *p;
  };

  srv.Get("/api/v1/health", wrap([d](const Request&, Response& res) {
            OJson j;
            j["status"] = "ok";
            j["ts_ms"] = d.clock.now_ms();
            send_json(res, 200, j);
          }));

  // --- auth -----------------------------------------------------------------
  srv.Post("/api/v1/auth/register", wrap([d](const Request& req, Response& res) {
             const auto body = body_json(req);
             std::optional<Actor> by;
             if (!req.get_header_value("Authorization").empty()) by = d.accounts.authenticate(bearer(req));
             const auto role_text = body.contains("role") ? field<std::string>(body, "role") : std::string("family");
             const auto role = parse_role(role_text);
             if (!role) throw Error(ErrorCode::ValidationError, "role must be admin, staff or family");
             const auto u = d.accounts.register_user(by, field<std::string>(body, "email"),
                                                     field<std::string>(body, "password"), *role,
                                                     field<std::string>(body, "display_name"));
             send_json(res, 201, user_to_json(u));
           }));
  srv.Post("/api/v1/auth/login", wrap([d](const Request& req, Response& res) {
             const auto body = body_json(req);
             const auto s = d.accounts.login(field<std::string>(body, "email"), field<std::string>(body, "password"));
             OJson j;
             j["token"] = s.token;
             j["token_type"] = "Bearer";
             j["expires_ts_ms"] = s.expires_ts_ms;
             j["user"] = user_to_json(*d.accounts.get(s.user_id));
             send_json(res, 200, j);
           }));
  srv.Post("/api/v1/auth/logout", wrap([d, auth](const Request& req, Response& res) {
             auth(req);
             d.accounts.logout(bearer(req));
             res.status = 204;
           }));
  srv.Get("/api/v1/me", wrap([d, auth](const Request& req, Response& res) {
            send_json(res, 200, user_to_json(*d.accounts.get(auth(req).user_id)));
          }));
  srv.Put("/api/v1/me/notify", wrap([d, auth](const Request& req, Response& res) {
            const auto a = auth(req);
            send_json(res, 200, user_to_json(d.accounts.set_notify(a.user_id, field<bool>(body_json(req), "enabled"))));
          }));

  // --- users (admin) ----------------------------------------------------------
  srv.Get("/api/v1/users", wrap([d, auth](const Request& req, Response& res) {
            if (auth(req).role != Role::Admin) throw Error(ErrorCode::Forbidden, "admin role required");
            OJson j;
            j["users"] = OJson::array();
            for (const auto& u : d.accounts.list()) j["users"].push_back(user_to_json(u));
            send_json(res, 200, j);
          }));
  srv.Put(R"(/api/v1/users/([^/]+)/links)", wrap([d, auth](const Request& req, Response& res) {
            const auto a = auth(req);
            if (a.role != Role::Admin) throw Error(ErrorCode::Forbidden, "admin role required");
            const auto ids = field<std::set<std::string>>(body_json(req), "patient_ids");
            for (const auto& id : ids) {
              if (!d.patients.get(id)) throw Error(ErrorCode::NotFound, "no patient " + id);
            }
            send_json(res, 200, user_to_json(d.accounts.set_links(a, req.matches[1], ids)));
          }));

  // --- patients ---------------------------------------------------------------
  srv.Get("/api/v1/patients", wrap([d, auth, links_of](const Request& req, Response& res) {
            const auto a = auth(req);
            const bool include_deleted = a.is_staff_or_admin() && req.get_param_value("include_deleted") == "true";
            const auto links = links_of(a);
            OJson j;
            j["patients"] = OJson::array();
            for (const auto& p : d.patients.list(include_deleted)) {
              if (a.is_staff_or_admin() || links.contains(p.patient_id)) j["patients"].push_back(patient_to_json(p));
            }
            send_json(res, 200, j);
          }));
  srv.Post("/api/v1/patients", wrap([d, auth, require_staff](const Request& req, Response& res) {
             require_staff(auth(req));
             send_json(res, 201, patient_to_json(d.patients.create(patient_from_json(body_json(req)))));
           }));
  srv.Get(R"(/api/v1/patients/([^/]+))", wrap([auth, require_patient](const Request& req, Response& res) {
            send_json(res, 200, patient_to_json(require_patient(auth(req), req.matches[1], false)));
          }));
  srv.Put(R"(/api/v1/patients/([^/]+))", wrap([d, auth, require_staff](const Request& req, Response& res) {
            require_staff(auth(req));
            const auto body = body_json(req);
            auto p = patient_from_json(body);
            std::optional<std::uint64_t> expected;
            if (body.contains("version")) expected = p.version;
            send_json(res, 200, patient_to_json(d.patients.update(req.matches[1], std::move(p), expected)));
          }));
  srv.Delete(R"(/api/v1/patients/([^/]+))", wrap([d, auth, require_staff](const Request& req, Response& res) {
               require_staff(auth(req));
               d.patients.remove(req.matches[1]);
               res.status = 204;
             }));

  srv.Get(R"(/api/v1/patients/([^/]+)/telemetry)", wrap([d, auth, require_patient](const Request& req, Response& res) {
            const auto p = require_patient(auth(req), req.matches[1], false);
            if (!req.has_param("metric")) throw Error(ErrorCode::ValidationError, "query parameter 'metric' is required");
            const auto metric = parse_metric(req.get_param_value("metric"));
            if (!metric) throw Error(ErrorCode::ValidationError, "unknown metric " + req.get_param_value("metric"));
            const auto to = int_param(req, "to", d.clock.now_ms() + 1);
            const auto from = int_param(req, "from", to - 3'600'000);
            const auto max_points = int_param(req, "max_points", 1000);
            if (max_points < 1) throw Error(ErrorCode::ValidationError, "max_points must be within [1, 100000]");
            const auto series =
                d.gateway.query_range(p.patient_id, *metric, from, to, static_cast<std::size_t>(max_points));
            OJson j;
            j["patient_id"] = p.patient_id;
            j["metric"] = metric_code(*metric);
            j["from"] = from;
            j["to"] = to;
            j["points"] = OJson::array();
            for (const auto& r : series) j["points"].push_back(record_json(r));
            send_json(res, 200, j);
          }));
  srv.Get(R"(/api/v1/patients/([^/]+)/latest)", wrap([d, auth, require_patient](const Request& req, Response& res) {
            const auto p = require_patient(auth(req), req.matches[1], false);
            OJson j;
            j["patient_id"] = p.patient_id;
            j["latest"] = OJson::object();
            for (const auto& [m, r] : d.gateway.latest(p.patient_id)) {
              auto e = record_json(r);
              e["device_id"] = r.device_id;
              j["latest"][std::string(metric_code(m))] = e;
            }
            send_json(res, 200, j);
          }));
  srv.Get(R"(/api/v1/patients/([^/]+)/rules)", wrap([d, auth, require_patient](const Request& req, Response& res) {
            const auto p = require_patient(auth(req), req.matches[1], false);
            OJson j;
            j["rules"] = OJson::array();
            for (const auto& r : d.alerts.rules(p.patient_id)) j["rules"].push_back(rule_to_json(r));
            send_json(res, 200, j);
          }));
  srv.Put(R"(/api/v1/patients/([^/]+)/rules)",
          wrap([d, auth, require_staff, require_patient](const Request& req, Response& res) {
            const auto a = auth(req);
            require_staff(a);
            const auto p = require_patient(a, req.matches[1], true);
            const auto body = body_json(req);
            std::vector<Json> items;
            if (body.contains("rules")) {
              if (!body.at("rules").is_array() || body.size() != 1) {
                throw Error(ErrorCode::ValidationError, "expected {\"rules\": [...]}");
              }
              items.assign(body.at("rules").begin(), body.at("rules").end());
            } else {
              items.push_back(body);
            }
            // Validate everything before applying anything.
            std::vector<AlertRule> parsed;
            for (const auto& item : items) {
              const auto metric = parse_metric(field<std::string>(item, "metric"));
              if (!metric) throw Error(ErrorCode::ValidationError, "unknown metric " + item.at("metric").dump());
              parsed.push_back(rule_from_json(item, p.patient_id, *metric));
              parsed.back().validate();
            }
            for (const auto& r : parsed) d.alerts.set_rule(r);
            OJson j;
            j["rules"] = OJson::array();
            for (const auto& r : d.alerts.rules(p.patient_id)) j["rules"].push_back(rule_to_json(r));
            send_json(res, 200, j);
          }));

  // --- alerts -----------------------------------------------------------------
  srv.Get("/api/v1/alerts", wrap([d, auth, links_of, require_patient](const Request& req, Response& res) {
            const auto a = auth(req);
            AlertFilter f;
            if (req.has_param("state")) {
              f.state = parse_alert_state(req.get_param_value("state"));
              if (!f.state) throw Error(ErrorCode::ValidationError, "state must be open or acked");
            }
            if (req.has_param("patient_id")) {
              f.patient_id = req.get_param_value("patient_id");
              require_patient(a, *f.patient_id, false);
            }
            if (req.has_param("since")) f.since_ms = int_param(req, "since", 0);
            const auto links = links_of(a);
            OJson j;
            j["alerts"] = OJson::array();
            for (const auto& al : d.alerts.list(f)) {
              if (a.is_staff_or_admin() || links.contains(al.patient_id)) j["alerts"].push_back(alert_to_json(al));
            }
            send_json(res, 200, j);
          }));
  srv.Post("/api/v1/alerts", wrap([d, auth, require_staff, require_patient](const Request& req, Response& res) {
             const auto a = auth(req);
             require_staff(a);
             const auto body = body_json(req);
             const auto p = require_patient(a, field<std::string>(body, "patient_id"), true);
             auto severity = Severity::Warning;
             if (body.contains("severity")) {
               const auto s = parse_severity(field<std::string>(body, "severity"));
               if (!s) throw Error(ErrorCode::ValidationError, "severity must be warning or critical");
               severity = *s;
             }
             send_json(res, 201,
                       alert_to_json(d.alerts.trigger_manual(a, p.patient_id, field<std::string>(body, "message"), severity)));
           }));
  srv.Post(R"(/api/v1/alerts/([^/]+)/ack)", wrap([d, auth](const Request& req, Response& res) {
             send_json(res, 200, alert_to_json(d.alerts.acknowledge(auth(req), req.matches[1])));
           }));

  // --- chat binding -------------------------------------------------------------
  const auto binding_json = [](const ChatBinding& b) {
    OJson j;
    j["user_id"] = b.user_id;
    j["chat_id"] = b.chat_id;
    j["verified"] = b.verified;
    return j;
  };
  srv.Post("/api/v1/notify/bind-code", wrap([d, auth](const Request& req, Response& res) {
             const auto a = auth(req);
             const auto body = body_json(req);
             std::optional<std::string> chat;
             if (body.contains("chat_id")) chat = field<std::string>(body, "chat_id");
             const auto c = d.bindings.issue_code(a.user_id, chat);
             OJson j;
             j["code"] = c.code;
             j["expires_ts_ms"] = c.expires_ts_ms;
             send_json(res, 201, j);
           }));
  srv.Post("/api/v1/notify/bind", wrap([d, auth, binding_json](const Request& req, Response& res) {
             const auto a = auth(req);
             const auto body = body_json(req);
             send_json(res, 200,
                       binding_json(d.bindings.bind_chat(a.user_id, field<std::string>(body, "chat_id"),
                                                         field<std::string>(body, "code"))));
           }));
  srv.Get("/api/v1/notify/binding", wrap([d, auth, binding_json](const Request& req, Response& res) {
            const auto b = d.bindings.binding(auth(req).user_id);
            OJson j;
            j["binding"] = b ? binding_json(*b) : OJson(nullptr);
            send_json(res, 200, j);
          }));
  srv.Delete("/api/v1/notify/binding", wrap([d, auth](const Request& req, Response& res) {
               d.bindings.unbind(auth(req).user_id);
               res.status = 204;
             }));

  // --- live stream ----------------------------------------------------------------
  srv.Get("/api/v1/stream", wrap([this, d, links_of, require_patient](const Request& req, Response& res) {
            // EventSource cannot send headers, so the token may also come as a query parameter.
            auto token = bearer(req);
            if (token.empty()) token = req.get_param_value("access_token");
            const auto a = d.accounts.authenticate(token);
            StreamHub::Filter filter;
            if (req.has_param("patient_id")) {
              const auto id = req.get_param_value("patient_id");
              require_patient(a, id, false);
              filter = [id](const std::string& p) { return p == id; };
            } else if (!a.is_staff_or_admin()) {
              filter = [links = links_of(a)](const std::string& p) { return links.contains(p); };
            }
            std::optional<std::uint64_t> last;
            auto last_text = req.get_header_value("Last-Event-ID");
            if (last_text.empty()) last_text = req.get_param_value("last_event_id");
            if (!last_text.empty()) {
              try {
                last = std::stoull(last_text);
              } catch (const std::exception&) {
                throw Error(ErrorCode::ValidationError, "Last-Event-ID must be a number");
              }
            }
            auto client = hub_.open(std::move(filter), last);
            res.set_header("Cache-Control", "no-cache");
            res.set_header("X-Accel-Buffering", "no");
            const auto heartbeat = config_.heartbeat_ms;
            auto next_beat = std::make_shared<std::int64_t>(0);
            auto started = std::make_shared<bool>(false);
            res.set_chunked_content_provider(
                "text/event-stream",
                [this, client, heartbeat, next_beat, started](std::size_t, httplib::DataSink& sink) {
                  const auto now = [] {
                    return std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now().time_since_epoch())
                        .count();
                  };
                  if (!*started) {
                    *started = true;
                    *next_beat = now() + heartbeat;
                    const std::string hello = "retry: 2000\n: connected\n\n";
                    return sink.write(hello.data(), hello.size());
                  }
                  if (stopping_) return false;
                  const auto wait = std::clamp<std::int64_t>(*next_beat - now(), 0, 500);
                  const auto events = client->next(std::chrono::milliseconds(wait));
                  if (client->closed()) return false;
                  std::string out;
                  for (const auto& e : events) out += e.wire();
                  if (now() >= *next_beat) {
                    *next_beat = now() + heartbeat;
                    out += "event: heartbeat\ndata: {\"ts_ms\":" + std::to_string(wall_now_ms()) + "}\n\n";
                  }
                  if (out.empty()) return sink.is_writable();
                  return sink.write(out.data(), out.size());
                },
                [this, client](bool) { hub_.close(client); });
          }));
}

}  // namespace lify
