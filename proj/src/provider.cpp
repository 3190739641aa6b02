#include "icp_audit/provider.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "icp_audit/errors.hpp"

namespace icp {

namespace {
std::string describe_failures(const std::vector<std::size_t>& failed,
                              const std::vector<std::string>& messages) {
  std::string out = "batch scoring failed for indices {";
  for (std::size_t i = 0; i < failed.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(failed[i]);
  }
  out += "}";
  if (!messages.empty()) out += ": " + messages.front();
  return out;
}
}  // namespace

BatchError::BatchError(std::vector<std::size_t> failed, std::vector<std::string> messages)
    : Error(describe_failures(failed, messages)),
      failed_(std::move(failed)),
      messages_(std::move(messages)) {}

}  // namespace icp

namespace icp::provider {

using nlohmann::json;

double sum_ll(const ScoredResponse& sr) {
  return std::accumulate(sr.logprobs.begin(), sr.logprobs.end(), 0.0);
}

double mean_ll(const ScoredResponse& sr) {
  if (sr.logprobs.empty()) return 0.0;
  return sum_ll(sr) / static_cast<double>(sr.logprobs.size());
}

void validate(const ScoredResponse& sr) {
  if (sr.logprobs.empty()) throw ProtocolError("provider scored zero response tokens");
  if (sr.tokens.size() != sr.logprobs.size())
    throw ProtocolError("token/logprob count mismatch");
  for (double lp : sr.logprobs) {
    if (!(lp <= 0.0)) throw ProtocolError("log-probability above zero or NaN");
  }
  if (sr.moments) {
    if (sr.moments->size() != sr.logprobs.size())
      throw ProtocolError("moment count does not match token count");
    for (const auto& m : *sr.moments) {
      if (!(m.sigma >= 0.0)) throw ProtocolError("negative sigma in moments");
    }
  }
}

json to_json(const ScoreRequest& req, bool full_dist) {
  json j;
  j["context"] = req.context ? json(*req.context) : json(nullptr);
  j["prompt"] = req.prompt;
  j["response"] = req.response;
  j["full_dist"] = full_dist;
  return j;
}

ScoreRequest score_request_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("score request must be an object");
  ScoreRequest req;
  try {
    if (auto it = j.find("context"); it != j.end() && !it->is_null())
      req.context = it->get<std::string>();
    req.prompt = j.at("prompt").get<std::string>();
    req.response = j.at("response").get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad score request: ") + e.what());
  }
  return req;
}

json to_json(const ScoredResponse& sr) {
  json j;
  j["tokens"] = sr.tokens;
  j["logprobs"] = sr.logprobs;
  if (sr.moments) {
    json arr = json::array();
    for (const auto& m : *sr.moments) arr.push_back({{"mu", m.mu}, {"sigma", m.sigma}});
    j["moments"] = std::move(arr);
  } else {
    j["moments"] = nullptr;
  }
  j["model_id"] = sr.model_id;
  return j;
}

ScoredResponse scored_response_from_json(const json& j) {
  ScoredResponse sr;
  try {
    sr.tokens = j.at("tokens").get<std::vector<std::string>>();
    sr.logprobs = j.at("logprobs").get<std::vector<double>>();
    if (auto it = j.find("moments"); it != j.end() && !it->is_null()) {
      std::vector<Moment> ms;
      for (const auto& m : *it) ms.push_back({m.at("mu").get<double>(), m.at("sigma").get<double>()});
      sr.moments = std::move(ms);
    }
    sr.model_id = j.value("model_id", std::string{});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad score response: ") + e.what());
  }
  return sr;
}

json to_json(const Capabilities& caps) {
  return {{"score", caps.score},
          {"full_dist", caps.full_dist},
          {"embed", caps.embed},
          {"generate", caps.generate},
          {"model_id", caps.model_id}};
}

Capabilities capabilities_from_json(const json& j) {
  Capabilities caps;
  try {
    caps.score = j.at("score").get<bool>();
    caps.full_dist = j.value("full_dist", false);
    caps.embed = j.value("embed", false);
    caps.generate = j.value("generate", false);
    caps.model_id = j.value("model_id", std::string{});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad capabilities: ") + e.what());
  }
  return caps;
}

json to_json(const GenerateRequest& req) {
  return {{"prompt", req.prompt}, {"n", req.n}, {"temperature", req.temperature}, {"seed", req.seed}};
}

GenerateRequest generate_request_from_json(const json& j) {
  GenerateRequest req;
  try {
    req.prompt = j.at("prompt").get<std::string>();
    const auto n = j.at("n").get<std::int64_t>();
    if (n < 0) throw ProtocolError("n must be non-negative");
    req.n = static_cast<std::size_t>(n);
    req.temperature = j.value("temperature", 1.0);
    req.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad generate request: ") + e.what());
  }
  return req;
}

std::vector<std::vector<double>> Provider::embed(std::span<const std::string>) {
  throw CapabilityError("provider does not support embeddings");
}

std::vector<std::string> Provider::generate(const GenerateRequest&) {
  throw CapabilityError("provider does not support generation");
}

struct ScoringClient::Counters {
  std::atomic<std::size_t> backend_calls{0};
  std::atomic<std::size_t> cache_hits{0};
};

ScoringClient::ScoringClient(std::shared_ptr<Provider> backend, ClientOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      counters_(std::make_unique<Counters>()) {
  if (!backend_) throw ConfigError("scoring client needs a provider");
  caps_ = with_retry([&] { return backend_->capabilities(); });
  if (!caps_.score) throw CapabilityError("provider does not advertise scoring");
  full_dist_ = options_.request_full_dist && caps_.full_dist;
  if (options_.enable_cache) {
    cache_ = options_.cache_path.empty() ? std::make_unique<ScoreCache>()
                                         : std::make_unique<ScoreCache>(options_.cache_path);
  }
}

ScoringClient::~ScoringClient() = default;

template <typename F>
auto ScoringClient::with_retry(F&& f) -> decltype(f()) {
  auto backoff = options_.retry.initial_backoff;
  const int attempts = std::max(1, options_.retry.attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      return f();
    } catch (const TransportError&) {
      if (attempt >= attempts) throw;
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

ScoredResponse ScoringClient::score_conditional(const ScoreRequest& req) {
  if (req.response.empty()) throw ValidationError("score request has an empty response");
  std::string key;
  if (cache_) {
    key = ScoreCache::key(caps_.model_id, req, full_dist_);
    if (auto hit = cache_->get(key)) {
      counters_->cache_hits.fetch_add(1, std::memory_order_relaxed);
      return *hit;
    }
  }
  counters_->backend_calls.fetch_add(1, std::memory_order_relaxed);
  auto sr = with_retry([&] { return backend_->score(req, full_dist_); });
  validate(sr);
  if (cache_) cache_->put(key, sr);
  return sr;
}

std::vector<ScoredResponse> ScoringClient::batch_score(std::span<const ScoreRequest> reqs,
                                                       std::size_t max_in_flight) {
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
  std::vector<ScoredResponse> out(reqs.size());
  std::vector<std::string> errors(reqs.size());
  std::vector<char> failed(reqs.size(), 0);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= reqs.size()) return;
      try {
        out[i] = score_conditional(reqs[i]);
      } catch (const std::exception& e) {
        failed[i] = 1;
        errors[i] = e.what();
      }
    }
  };

  const auto n_workers = std::min(max_in_flight, reqs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  std::vector<std::size_t> failed_idx;
  std::vector<std::string> messages;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    if (failed[i]) {
      failed_idx.push_back(i);
      messages.push_back(std::move(errors[i]));
    }
  }
  if (!failed_idx.empty()) throw BatchError(std::move(failed_idx), std::move(messages));
  return out;
}

std::vector<std::vector<double>> ScoringClient::embed(std::span<const std::string> texts) {
  if (!caps_.embed) throw CapabilityError("provider does not advertise embed");
  return with_retry([&] { return backend_->embed(texts); });
}

std::vector<std::string> ScoringClient::generate(const GenerateRequest& req) {
  if (!caps_.generate) throw CapabilityError("provider does not advertise generate");
  auto texts = with_retry([&] { return backend_->generate(req); });
  if (texts.size() != req.n)
    throw ProtocolError("provider returned " + std::to_string(texts.size()) + " texts, expected " +
                        std::to_string(req.n));
  return texts;
}

std::size_t ScoringClient::backend_calls() const noexcept { return counters_->backend_calls.load(); }
std::size_t ScoringClient::cache_hits() const noexcept { return counters_->cache_hits.load(); }

}  // namespace icp::provider
