#pragma once

// HTTP front end for SessionStore, plus the JSON config file shared with the
// CLI.

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

// Eigen must be parsed before httplib: <resolv.h> defines a _res macro.
#include "qlab/serialize.hpp"
#include "qlab/session.hpp"
#include "httplib.h"

namespace qlab {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
  SessionSettings settings = SessionSettings::standard();
};

// Parse failures carry the line and the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline int line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

template <class F>
auto field(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + name + "': " + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("field '" + name + "': " + e.what());
  }
}

}  // namespace detail

inline json parse_config_text(const std::string& text, const std::string& origin = "config") {
  try {
    return json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(detail::line_of(text, e.byte)) + ": " + e.what());
  }
}

// Schema:
//   host, port, log_dir, static_dir      server settings
//   params                               SystemParams fields
//   nudge_text                           enables GT_NUDGE
//   treatments: [TreatmentSpec, ...]     per-kind overrides
//   paths: {"name": seed, ...}           fixed sample paths by name
inline ServiceConfig service_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  static const std::set<std::string> known{"host",       "port",       "log_dir", "static_dir",
                                           "params",     "nudge_text", "treatments", "paths"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown field '" + it.key() + "'");
  }
  ServiceConfig c;
  std::string nudge;
  if (j.contains("nudge_text")) nudge = detail::field("nudge_text", [&] { return j.at("nudge_text").get<std::string>(); });
  c.settings = SessionSettings::standard(nudge);
  if (j.contains("host")) c.host = detail::field("host", [&] { return j.at("host").get<std::string>(); });
  if (j.contains("port")) c.port = detail::field("port", [&] { return j.at("port").get<int>(); });
  if (c.port < 0 || c.port > 65535) throw ConfigError("field 'port': out of range");
  if (j.contains("log_dir")) {
    c.settings.log_dir = detail::field("log_dir", [&] { return std::filesystem::path(j.at("log_dir").get<std::string>()); });
  }
  if (j.contains("static_dir")) {
    c.static_dir = detail::field("static_dir", [&] { return std::filesystem::path(j.at("static_dir").get<std::string>()); });
  }
  if (j.contains("params")) {
    c.settings.params = detail::field("params", [&] { return j.at("params").get<SystemParams>(); });
    if (auto err = validate_params(c.settings.params)) throw ConfigError("field 'params': " + *err);
  }
  if (j.contains("treatments")) {
    const auto& arr = j.at("treatments");
    if (!arr.is_array()) throw ConfigError("field 'treatments': expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string name = "treatments[" + std::to_string(i) + "]";
      auto t = detail::field(name, [&] { return arr[i].get<TreatmentSpec>(); });
      if (t.kind == TreatmentKind::GT_NUDGE && t.nudge_text.empty()) t.nudge_text = nudge;
      detail::field(name, [&] {
        validate_treatment(t);
        return 0;
      });
      c.settings.treatments[t.kind] = t;
    }
  }
  if (j.contains("paths")) {
    const auto& paths = j.at("paths");
    if (!paths.is_object()) throw ConfigError("field 'paths': expected an object");
    for (auto it = paths.begin(); it != paths.end(); ++it) {
      c.settings.paths[it.key()] = detail::field("paths." + it.key(), [&] { return it.value().get<std::uint64_t>(); });
    }
  }
  return c;
}

// QLAB_PORT and QLAB_LOG_DIR take precedence over the file.
inline void apply_env_overrides(ServiceConfig& c) {
  if (const char* p = std::getenv("QLAB_PORT"); p && *p) {
    try {
      c.port = std::stoi(p);
    } catch (const std::exception&) {
      throw ConfigError(std::string("QLAB_PORT is not a number: ") + p);
    }
  }
  if (const char* d = std::getenv("QLAB_LOG_DIR"); d && *d) c.settings.log_dir = d;
}

inline ServiceConfig load_service_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return service_config_from_json(parse_config_text(ss.str(), file.string()));
}

inline json error_body(const std::string& code, const std::string& message) {
  return json{{"error", {{"code", code}, {"message", message}}}};
}

inline const char* to_string(SessionError::Code c) {
  switch (c) {
    case SessionError::Code::not_found: return "not_found";
    case SessionError::Code::invalid: return "invalid";
    case SessionError::Code::conflict: return "conflict";
    case SessionError::Code::busy: return "busy";
  }
  return "?";
}

// Body of POST /sessions.
inline CreateRequest create_request_from_json(const json& j) {
  auto invalid = [](const std::string& m) { return SessionError(SessionError::Code::invalid, m); };
  if (!j.is_object()) throw invalid("body must be an object");
  CreateRequest r;
  if (!j.contains("treatment")) throw invalid("missing 'treatment'");
  const auto kind = treatment_kind_from_string(j.at("treatment").get<std::string>());
  if (!kind) throw invalid("unknown treatment");
  r.kind = *kind;
  if (j.contains("mode")) {
    const auto m = session_mode_from_string(j.at("mode").get<std::string>());
    if (!m) throw invalid("mode must be 'live' or 'committed'");
    r.mode = *m;
  }
  if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("path_id") && !j.at("path_id").is_null()) r.path_id = j.at("path_id").get<std::string>();
  if (j.contains("strategy") && !j.at("strategy").is_null()) {
    const auto s = committed_strategy_from_string(j.at("strategy").get<std::string>());
    if (!s) throw invalid("strategy must be 'assign_one' or 'assign_two'");
    r.strategy = *s;
  }
  return r;
}

// Body of POST /sessions/{id}/advance: {"mode": "step"|"to_decision"|
// "units"|"wall_seconds", "amount": x}. An empty body means to_decision.
inline AdvanceRequest advance_request_from_json(const json& j) {
  auto invalid = [](const std::string& m) { return SessionError(SessionError::Code::invalid, m); };
  AdvanceRequest r;
  if (j.is_null()) return r;
  if (!j.is_object()) throw invalid("body must be an object");
  const std::string mode = j.value("mode", "to_decision");
  if (mode == "step") {
    r.kind = AdvanceRequest::Kind::step;
  } else if (mode == "to_decision") {
    r.kind = AdvanceRequest::Kind::to_next_decision;
  } else if (mode == "units" || mode == "wall_seconds") {
    r.kind = mode == "units" ? AdvanceRequest::Kind::by_units : AdvanceRequest::Kind::by_wall_seconds;
    if (!j.contains("amount")) throw invalid("'amount' is required for mode " + mode);
    r.amount = j.at("amount").get<double>();
    if (!(r.amount >= 0.0) || !std::isfinite(r.amount)) throw invalid("'amount' must be a finite non-negative number");
  } else {
    throw invalid("unknown advance mode '" + mode + "'");
  }
  return r;
}

class SessionServer {
 public:
  explicit SessionServer(ServiceConfig config) : config_(std::move(config)), store_(config_.settings) { routes(); }

  SessionStore& store() { return store_; }
  httplib::Server& http() { return server_; }

  bool listen() { return server_.listen(config_.host, config_.port); }

  // Binds an ephemeral port and returns it; call listen_after_bind() next.
  int bind_any_port() { return server_.bind_to_any_port(config_.host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return nullptr;
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw SessionError(SessionError::Code::invalid, std::string("malformed JSON: ") + e.what());
    }
  }

  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const SessionError& e) {
        send_json(res, e.http_status(), error_body(to_string(e.code()), e.what()));
      } catch (const json::exception& e) {
        send_json(res, 400, error_body("invalid", e.what()));
      } catch (const Error& e) {
        send_json(res, 400, error_body("invalid", e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void routes() {
    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 201, store_.create(create_request_from_json(body_of(req))));
    }));
    server_.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, store_.view(req.matches[1]));
    }));
    server_.Post(R"(/sessions/([^/]+)/advance)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, store_.advance(req.matches[1], advance_request_from_json(body_of(req))));
    }));
    server_.Post(R"(/sessions/([^/]+)/decision)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      if (!b.is_object() || !b.contains("claim") || !b.at("claim").is_number_integer()) {
        throw SessionError(SessionError::Code::invalid, "body must be {\"claim\": 1|2}");
      }
      send_json(res, 200, store_.decide(req.matches[1], b.at("claim").get<int>()));
    }));
    server_.Post(R"(/sessions/([^/]+)/commit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto b = body_of(req);
      std::optional<CommittedStrategy> s;
      if (b.is_object() && b.contains("strategy") && b.at("strategy").is_string()) {
        s = committed_strategy_from_string(b.at("strategy").get<std::string>());
      }
      if (!s) throw SessionError(SessionError::Code::invalid, "body must be {\"strategy\": \"assign_one\"|\"assign_two\"}");
      send_json(res, 200, store_.commit(req.matches[1], *s));
    }));
    server_.Get(R"(/sessions/([^/]+)/payoff)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, payoff_json(store_.payoff(req.matches[1])));
    }));
    server_.Get(R"(/sessions/([^/]+)/log)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.status = 200;
      res.set_content(store_.log(req.matches[1]), "application/x-ndjson");
    }));
    if (config_.static_dir) server_.set_mount_point("/", config_.static_dir->string());
  }

  ServiceConfig config_;
  SessionStore store_;
  httplib::Server server_;
};

}  // namespace qlab
