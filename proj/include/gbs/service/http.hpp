#pragma once

// HTTP/JSON front end for SessionStore.

#include <functional>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "gbs/service/session.hpp"

namespace gbs::service {

class SurveyServer {
 public:
  explicit SurveyServer(SessionStore& store) : store_(store) { routes(); }

  httplib::Server& server() { return svr_; }

  // Binds to an ephemeral port and returns it; pair with listen_after_bind().
  int bind_any(const std::string& host = "127.0.0.1") { return svr_.bind_to_any_port(host); }
  bool listen_after_bind() { return svr_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return svr_.listen(host, port); }
  void wait_until_ready() { svr_.wait_until_ready(); }
  void stop() { svr_.stop(); }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
    }
  }

  static std::uint64_t parse_id(const std::string& s) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw NotFoundError("unknown respondent " + s);
    }
  }

  // Maps library errors onto status codes: 400 invalid input, 401 bad
  // token, 404 unknown ids, 409 state conflicts.
  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const ValidationError& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const ConfigError& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const json::exception& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const AuthError& e) {
        send(res, 401, {{"error", e.what()}});
      } catch (const NotFoundError& e) {
        send(res, 404, {{"error", e.what()}});
      } catch (const ConflictError& e) {
        send(res, 409, {{"error", e.what()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"error", e.what()}});
      }
    };
  }

  Session& authorized_session(const httplib::Request& req) {
    Session& s = store_.get(req.matches[1]);
    const std::string auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    const std::string token = auth.rfind(prefix, 0) == 0 ? auth.substr(prefix.size()) : "";
    if (!s.authorized(token)) throw AuthError("missing or invalid session bearer token");
    return s;
  }

  void routes() {
    svr_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    svr_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    svr_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

    svr_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                send(res, 201, store_.create(parse_body(req)));
              }));

    svr_.Post(R"(/sessions/([^/]+)/respondents)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                Session& s = authorized_session(req);
                const json body = parse_body(req);
                std::optional<std::vector<double>> x;
                if (body.contains("covariates") && !body["covariates"].is_null()) x = body["covariates"].get<std::vector<double>>();
                send(res, 201, s.add_respondent(x));
              }));

    svr_.Get(R"(/sessions/([^/]+)/respondents/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, authorized_session(req).respondent_info(parse_id(req.matches[2])));
             }));

    svr_.Get(R"(/sessions/([^/]+)/respondents/([^/]+)/question)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               Session& s = authorized_session(req);
               const auto rid = parse_id(req.matches[2]);
               try {
                 send(res, 200, s.next_question(rid));
               } catch (const ConflictError& e) {
                 // Hand the pending question back so a client can resume.
                 json body{{"error", e.what()}};
                 const json info = s.respondent_info(rid);
                 if (info.contains("pending_question")) body["pending_question"] = info["pending_question"];
                 send(res, 409, body);
               }
             }));

    svr_.Post(R"(/sessions/([^/]+)/respondents/([^/]+)/choice)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                Session& s = authorized_session(req);
                const json body = parse_body(req);
                if (!body.contains("question_token") || !body["question_token"].is_string())
                  throw ValidationError("question_token is required");
                const std::string choice = body.value("choice", std::string{});
                if (choice != "z1" && choice != "z2") throw ValidationError("choice must be \"z1\" or \"z2\"");
                send(res, 200,
                     s.submit_choice(parse_id(req.matches[2]), body["question_token"].get<std::string>(),
                                     choice == "z1" ? Choice::first : Choice::second));
              }));

    svr_.Get(R"(/sessions/([^/]+)/state)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, authorized_session(req).state());
             }));

    svr_.Get(R"(/sessions/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               res.status = 200;
               res.set_content(authorized_session(req).export_log(), "application/x-ndjson");
             }));

    const std::pair<const char*, SessionStatus> transitions[] = {
        {"suspend", SessionStatus::suspended}, {"resume", SessionStatus::active}, {"complete", SessionStatus::completed}};
    for (const auto& [verb, status] : transitions) {
      svr_.Post(std::string(R"(/sessions/([^/]+)/)") + verb, guarded([this, status](const httplib::Request& req, httplib::Response& res) {
                  send(res, 200, authorized_session(req).set_status(status));
                }));
    }
  }

  SessionStore& store_;
  httplib::Server svr_;
};

}  // namespace gbs::service
