#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace icp::provider {

class ScoringClient;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

/// Built-in fallback: hashed TF-IDF, L2-normalized.
///
/// IDF comes from the documents passed at construction (the reference pool),
/// idf(w) = ln((1 + N) / (1 + df(w))) + 1. Words are mapped to `dims`
/// buckets by FNV-1a. Empty texts embed to the zero vector.
class TfidfEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDefaultDims = 4096;

  explicit TfidfEmbedder(std::span<const std::string> documents, std::size_t dims = kDefaultDims);

  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::vector<double> embed_one(const std::string& text) const;
  std::size_t dims() const noexcept { return dims_; }

 private:
  std::size_t dims_;
  double n_docs_ = 0;
  std::unordered_map<std::string, double> df_;
};

/// Delegates to the provider's /v1/embed.
class ProviderEmbedder final : public Embedder {
 public:
  explicit ProviderEmbedder(ScoringClient& client) : client_(client) {}
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

 private:
  ScoringClient& client_;
};

/// 0 when either vector is all zeros.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace icp::provider
