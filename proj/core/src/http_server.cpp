#include <thread>

#include <httplib.h>

#include "peloton/errors.hpp"
#include "peloton/service.hpp"

namespace peloton {

struct HttpServer::Impl {
  ForecastService& service;
  httplib::Server server;
  std::thread worker;

  explicit Impl(ForecastService& s) : service(s) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
      const auto reply = handle_request(service, req.method, req.path, query, req.body);
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    };
    for (const char* path : {"/v1/forecast", "/v1/adjustments", "/v1/methods", "/v1/health"}) {
      server.Get(path, route);
      server.Post(path, route);
    }
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      res.set_content("{\"error\":{\"code\":\"not_found\",\"message\":\"no route for " + req.path + "\"}}",
                      "application/json");
    });
  }
};

HttpServer::HttpServer(ForecastService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw ConfigError("cannot serve on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace peloton
