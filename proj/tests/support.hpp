#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "icp_audit/corpus.hpp"
#include "icp_audit/mock_provider.hpp"
#include "icp_audit/provider.hpp"

namespace icp::test {

using ScoreFn = std::function<provider::ScoredResponse(const provider::ScoreRequest&, bool)>;

/// Provider driven by a callback; counts calls.
class FakeProvider : public provider::Provider {
 public:
  explicit FakeProvider(ScoreFn fn, provider::Capabilities caps = {true, false, false, false, "fake-1"})
      : fn_(std::move(fn)), caps_(std::move(caps)) {}

  provider::Capabilities capabilities() override { return caps_; }
  provider::ScoredResponse score(const provider::ScoreRequest& req, bool full_dist) override {
    ++calls;
    auto sr = fn_(req, full_dist);
    if (sr.model_id.empty()) sr.model_id = caps_.model_id;
    return sr;
  }

  std::atomic<int> calls{0};

 private:
  ScoreFn fn_;
  provider::Capabilities caps_;
};

/// One token per logprob, no moments.
inline provider::ScoredResponse scored(std::vector<double> lps) {
  provider::ScoredResponse sr;
  for (std::size_t i = 0; i < lps.size(); ++i) sr.tokens.push_back("t" + std::to_string(i));
  sr.logprobs = std::move(lps);
  return sr;
}

inline corpus::Sample sample(std::string id, std::string instruction, std::string input, std::string output,
                             corpus::Label label = corpus::Label::unknown) {
  return {std::move(id), std::move(instruction), std::move(input), std::move(output), label};
}

/// Runs a MockServer on a free loopback port for the fixture's lifetime.
class ServerThread {
 public:
  explicit ServerThread(std::shared_ptr<mock::MockProvider> provider)
      : server_(std::make_unique<mock::MockServer>(std::move(provider))) {
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->serve(); });
    while (!server_->running()) std::this_thread::yield();
  }
  ~ServerThread() {
    server_->stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int port() const { return port_; }

 private:
  std::unique_ptr<mock::MockServer> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace icp::test
