#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>


#include "icp_audit/digest.hpp"
#include "icp_audit/errors.hpp"
#include "icp_audit/provider.hpp"

namespace icp::provider {

using nlohmann::json;


struct ScoreCache::Impl {
  mutable std::shared_mutex mu;
  std::unordered_map<std::string, ScoredResponse> entries;
  std::filesystem::path path;
  std::ofstream log;
};

ScoreCache::ScoreCache() : impl_(std::make_unique<Impl>()) {}
ScoreCache::~ScoreCache() = default;

ScoreCache::ScoreCache(std::filesystem::path path) : impl_(std::make_unique<Impl>()) {
  impl_->path = std::move(path);
  if (std::filesystem::exists(impl_->path)) {
    std::ifstream in(impl_->path, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      // a torn final line from an interrupted run is ignored
      auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("value")) continue;
      impl_->entries.insert_or_assign(j["key"].get<std::string>(),
                                      scored_response_from_json(j["value"]));
    }
  } else if (impl_->path.has_parent_path()) {
    std::filesystem::create_directories(impl_->path.parent_path());
  }
  impl_->log.open(impl_->path, std::ios::binary | std::ios::app);
  if (!impl_->log) throw IoError("cannot open cache log '" + impl_->path.string() + "'");
}

std::string ScoreCache::key(std::string_view model_id, const ScoreRequest& req, bool full_dist) {
  json j = json::array({model_id, req.context ? json(*req.context) : json(nullptr), req.prompt,
                        req.response, full_dist});
  return sha256_hex(j.dump());
}

std::optional<ScoredResponse> ScoreCache::get(const std::string& key) const {
  std::shared_lock lock(impl_->mu);
  auto it = impl_->entries.find(key);
  if (it == impl_->entries.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(const std::string& key, const ScoredResponse& value) {
  std::unique_lock lock(impl_->mu);
  auto [it, inserted] = impl_->entries.try_emplace(key, value);
  if (inserted && impl_->log.is_open()) {
    impl_->log << json{{"key", key}, {"value", to_json(value)}}.dump() << '\n';
    impl_->log.flush();
  }
}

std::size_t ScoreCache::size() const {
  std::shared_lock lock(impl_->mu);
  return impl_->entries.size();
}

}  // namespace icp::provider
