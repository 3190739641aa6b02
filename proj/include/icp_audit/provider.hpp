#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace icp::provider {

/// One scoring query. An absent context is the baseline LL(y|x); an empty
/// but present context is a distinct (if usually equivalent) request.
struct ScoreRequest {
  std::optional<std::string> context;
  std::string prompt;
  std::string response;

  bool operator==(const ScoreRequest&) const = default;
};

/// Mean and standard deviation of ln p(z|h) under the next-token distribution.
struct Moment {
  double mu = 0;
  double sigma = 0;

  bool operator==(const Moment&) const = default;
};

/// Natural-log probabilities of the response tokens only.
struct ScoredResponse {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  std::optional<std::vector<Moment>> moments;
  std::string model_id;

  bool operator==(const ScoredResponse&) const = default;
};

struct Capabilities {
  bool score = true;
  bool full_dist = false;
  bool embed = false;
  bool generate = false;
  std::string model_id;

  bool operator==(const Capabilities&) const = default;
};

struct GenerateRequest {
  std::string prompt;
  std::size_t n = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Sum of per-token log-probabilities; the NLL is its negation.
double sum_ll(const ScoredResponse& sr);
/// Per-token mean, used by the length-normalized ablation.
double mean_ll(const ScoredResponse& sr);

/// Throws ProtocolError when the response breaks the shape invariants.
void validate(const ScoredResponse& sr);

// Wire format (see README for the endpoint table).
nlohmann::json to_json(const ScoreRequest& req, bool full_dist);
ScoreRequest score_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoredResponse& sr);
ScoredResponse scored_response_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Capabilities& caps);
Capabilities capabilities_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerateRequest& req);
GenerateRequest generate_request_from_json(const nlohmann::json& j);

/// A scoring backend: the in-process mock, an HTTP endpoint, or a test double.
class Provider {
 public:
  virtual ~Provider() = default;

  virtual Capabilities capabilities() = 0;
  virtual ScoredResponse score(const ScoreRequest& req, bool full_dist) = 0;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts);
  virtual std::vector<std::string> generate(const GenerateRequest& req);
};

/// Append-only on-disk log of scored responses keyed by a content hash.
class ScoreCache {
 public:
  ScoreCache();
  /// Loads any existing entries from `path`, then appends new ones to it.
  explicit ScoreCache(std::filesystem::path path);
  ~ScoreCache();
  ScoreCache(const ScoreCache&) = delete;
  ScoreCache& operator=(const ScoreCache&) = delete;

  static std::string key(std::string_view model_id, const ScoreRequest& req, bool full_dist);

  std::optional<ScoredResponse> get(const std::string& key) const;
  void put(const std::string& key, const ScoredResponse& value);
  std::size_t size() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{50};
};

struct ClientOptions {
  /// Ask for per-position moments whenever the provider can supply them.
  bool request_full_dist = true;
  bool enable_cache = true;
  /// On-disk log; in-memory only when empty.
  std::filesystem::path cache_path;
  RetryPolicy retry;
};

/// Front door to a Provider: capability negotiation, caching, retries and
/// bounded fan-out. Safe for concurrent use.
class ScoringClient {
 public:
  explicit ScoringClient(std::shared_ptr<Provider> backend, ClientOptions options = {});
  ~ScoringClient();

  const Capabilities& capabilities() const noexcept { return caps_; }
  const std::string& model_id() const noexcept { return caps_.model_id; }
  bool full_dist() const noexcept { return full_dist_; }

  ScoredResponse score_conditional(const ScoreRequest& req);

  /// Results in request order; at most `max_in_flight` backend calls at once.
  std::vector<ScoredResponse> batch_score(std::span<const ScoreRequest> reqs,
                                          std::size_t max_in_flight);

  std::vector<std::vector<double>> embed(std::span<const std::string> texts);
  std::vector<std::string> generate(const GenerateRequest& req);

  std::size_t backend_calls() const noexcept;
  std::size_t cache_hits() const noexcept;

 private:
  template <typename F>
  auto with_retry(F&& f) -> decltype(f());

  std::shared_ptr<Provider> backend_;
  ClientOptions options_;
  Capabilities caps_;
  bool full_dist_ = false;
  std::unique_ptr<ScoreCache> cache_;
  struct Counters;
  std::unique_ptr<Counters> counters_;
};

}  // namespace icp::provider
