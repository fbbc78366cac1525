#include <sstream>

#include "httplib.h"
#include "pgqa/serve.hpp"

namespace pgqa::serve {

using io::Json;
using io::OJson;

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  explicit Impl(Service& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, int status, const OJson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, bool retryable = false) {
  OJson j;
  j["error"] = message;
  j["retryable"] = retryable;
  send(res, status, j);
}

Json parse_body(const httplib::Request& req) {
  Json j = Json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

template <class F>
auto guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const AskError& e) {
      send_error(res, e.retryable() ? 503 : 502, e.what(), e.retryable());
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& svc = impl_->service;

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

  srv.Post("/documents", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             std::istringstream in(req.body);
             auto docs = io::read_documents(in);
             if (docs.empty()) throw ValidationError("no documents in body");
             OJson out = OJson::array();
             for (auto& d : docs) {
               OJson e;
               e["doc_id"] = d.doc_id;
               e["pages"] = d.page_count();
               svc.add_document(std::move(d));
               out.push_back(std::move(e));
             }
             send(res, 201, out);
           }));

  srv.Get(R"(/documents/([^/]+)/pages/(-?\d+))",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            auto doc = svc.document(req.matches[1]);
            send(res, 200, page_to_json(*doc, std::stoi(req.matches[2])));
          }));

  srv.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const Json body = parse_body(req);
             if (!body.contains("doc_id") || !body["doc_id"].is_string())
               throw ValidationError("doc_id is required");
             std::size_t budget = 0;
             if (body.contains("budget")) {
               if (!body["budget"].is_number_unsigned() || body["budget"].get<std::size_t>() == 0)
                 throw ValidationError("budget must be a positive integer");
               budget = body["budget"].get<std::size_t>();
             }
             send(res, 201, session_to_json(svc.create_session(body["doc_id"].get<std::string>(), budget)));
           }));

  srv.Get(R"(/sessions/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, 200, session_to_json(svc.session(req.matches[1])));
          }));

  srv.Post(R"(/sessions/([^/]+)/ask)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const Json body = parse_body(req);
             if (!body.contains("question") || !body["question"].is_string())
               throw ValidationError("question is required");
             send(res, 200, turn_to_json(svc.ask(req.matches[1], body["question"].get<std::string>())));
           }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace pgqa::serve
