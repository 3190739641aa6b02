#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icp_audit/corpus.hpp"
#include "icp_audit/embed.hpp"
#include "icp_audit/ngram_model.hpp"
#include "icp_audit/provider.hpp"

namespace icp::mock {

struct GeneratorOptions {
  /// Words replaced per variant (clamped to the text length).
  std::size_t words_changed = 20;
};

/// The text after the "Original text:" marker of a perturbation prompt, or
/// the whole prompt when the marker is absent.
std::string extract_original(std::string_view prompt);

/// In-process provider backed by an NGramModel.
///
/// `generate` is a seeded word-substitution perturber: each variant replaces
/// `words_changed` seeded positions of the original text with vocabulary words
/// drawn from the unigram distribution sharpened by 1/temperature
/// (temperature <= 0 picks the most frequent word). `embed` is available when
/// a corpus is supplied and uses TF-IDF fitted on that corpus.
class MockProvider final : public provider::Provider {
 public:
  explicit MockProvider(NGramModel model, const corpus::SampleSet* embed_corpus = nullptr,
                        GeneratorOptions gen = {});

  provider::Capabilities capabilities() override;
  provider::ScoredResponse score(const provider::ScoreRequest& req, bool full_dist) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::vector<std::string> generate(const provider::GenerateRequest& req) override;

  const NGramModel& model() const noexcept { return model_; }

 private:
  NGramModel model_;
  GeneratorOptions gen_;
  std::unique_ptr<provider::TfidfEmbedder> embedder_;
  /// (token id, corpus frequency) for every generatable word, by id.
  std::vector<std::pair<TokenId, double>> unigram_;
};

/// HTTP front end serving the provider protocol for a MockProvider, plus
/// `GET /v1/mock/model` returning the serialized model.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<MockProvider> provider);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port. Throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace icp::mock
