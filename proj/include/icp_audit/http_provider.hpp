#pragma once

#include <chrono>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "icp_audit/provider.hpp"

namespace icp::provider {

/// Client for the JSON scoring protocol. One attempt per call: transport
/// failures raise TransportError (the ScoringClient retries those), non-2xx
/// answers raise ProtocolError with the server's message.
class HttpProvider final : public Provider {
 public:
  /// `endpoint` like "http://127.0.0.1:8080".
  explicit HttpProvider(std::string endpoint, std::chrono::seconds timeout = std::chrono::seconds(60));

  Capabilities capabilities() override;
  ScoredResponse score(const ScoreRequest& req, bool full_dist) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::vector<std::string> generate(const GenerateRequest& req) override;

  /// The mock's serialized model, or nullopt when the endpoint is not a mock.
  std::optional<nlohmann::json> mock_model();

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  nlohmann::json get(const std::string& path);
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  std::string endpoint_;
  std::chrono::seconds timeout_;
};

}  // namespace icp::provider
