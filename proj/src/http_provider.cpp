#include "icp_audit/http_provider.hpp"

#include <httplib.h>

#include "icp_audit/errors.hpp"

namespace icp::provider {

using nlohmann::json;

namespace {

json parse_body(const httplib::Result& res, const std::string& path) {
  if (!res) throw TransportError(path + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    std::string message = res->body;
    auto j = json::parse(res->body, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("error") && j["error"].is_string())
      message = j["error"].get<std::string>();
    throw ProtocolError(path + " returned HTTP " + std::to_string(res->status) + ": " + message);
  }
  auto j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError(path + ": response is not JSON");
  return j;
}

}  // namespace

HttpProvider::HttpProvider(std::string endpoint, std::chrono::seconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  if (endpoint_.empty()) throw ConfigError("empty provider endpoint");
}

json HttpProvider::get(const std::string& path) {
  httplib::Client cli(endpoint_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  return parse_body(cli.Get(path), path);
}

json HttpProvider::post(const std::string& path, const json& body) {
  httplib::Client cli(endpoint_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  return parse_body(cli.Post(path, body.dump(), "application/json"), path);
}

Capabilities HttpProvider::capabilities() { return capabilities_from_json(get("/v1/capabilities")); }

ScoredResponse HttpProvider::score(const ScoreRequest& req, bool full_dist) {
  return scored_response_from_json(post("/v1/score", to_json(req, full_dist)));
}

std::vector<std::vector<double>> HttpProvider::embed(std::span<const std::string> texts) {
  json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  try {
    return post("/v1/embed", body).at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad embed response: ") + e.what());
  }
}

std::vector<std::string> HttpProvider::generate(const GenerateRequest& req) {
  try {
    return post("/v1/generate", to_json(req)).at("texts").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad generate response: ") + e.what());
  }
}

std::optional<json> HttpProvider::mock_model() {
  try {
    return get("/v1/mock/model");
  } catch (const ProtocolError&) {
    return std::nullopt;
  }
}

}  // namespace icp::provider
