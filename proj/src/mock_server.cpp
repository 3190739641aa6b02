#include <httplib.h>

#include <atomic>

#include "icp_audit/errors.hpp"
#include "icp_audit/mock_provider.hpp"

namespace icp::mock {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, json{{"error", message}}, status);
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const json::exception& e) {
    send_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const ProtocolError& e) {
    send_error(res, 400, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const CapabilityError& e) {
    send_error(res, 501, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace

struct MockServer::Impl {
  std::shared_ptr<MockProvider> provider;
  httplib::Server server;
  json model_json;
};

MockServer::MockServer(std::shared_ptr<MockProvider> provider) : impl_(std::make_unique<Impl>()) {
  impl_->provider = std::move(provider);
  impl_->model_json = impl_->provider->model().to_json();
  auto* p = impl_->provider.get();
  auto& srv = impl_->server;
  // SO_REUSEADDR only; no port sharing.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  srv.Get("/v1/capabilities", [p](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, provider::to_json(p->capabilities())); });
  });
  srv.Post("/v1/score", [p](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto sreq = provider::score_request_from_json(body);
      const bool full_dist = body.value("full_dist", false);
      send_json(res, provider::to_json(p->score(sreq, full_dist)));
    });
  });
  srv.Post("/v1/embed", [p](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto texts = json::parse(req.body).at("texts").get<std::vector<std::string>>();
      send_json(res, json{{"vectors", p->embed(texts)}});
    });
  });
  srv.Post("/v1/generate", [p](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto greq = provider::generate_request_from_json(json::parse(req.body));
      send_json(res, json{{"texts", p->generate(greq)}});
    });
  });
  srv.Get("/v1/mock/model", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, impl_->model_json);
  });
}

MockServer::~MockServer() { stop(); }

int MockServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void MockServer::serve() {
  if (!impl_->server.listen_after_bind()) throw IoError("mock server stopped with an error");
}

void MockServer::stop() {
  if (impl_) impl_->server.stop();
}

bool MockServer::running() const { return impl_->server.is_running(); }

}  // namespace icp::mock
