#include "icp_audit/embed.hpp"

#include <cmath>
#include <map>
#include <set>

#include "icp_audit/errors.hpp"
#include "icp_audit/provider.hpp"
#include "icp_audit/rng.hpp"
#include "icp_audit/tokenizer.hpp"

namespace icp::provider {

TfidfEmbedder::TfidfEmbedder(std::span<const std::string> documents, std::size_t dims) : dims_(dims) {
  if (dims_ == 0) throw ConfigError("embedding dimension must be positive");
  n_docs_ = static_cast<double>(documents.size());
  for (const auto& doc : documents) {
    auto words = mock::tokenize(doc);
    std::set<std::string> uniq(words.begin(), words.end());
    for (const auto& w : uniq) df_[w] += 1.0;
  }
}

std::vector<double> TfidfEmbedder::embed_one(const std::string& text) const {
  std::vector<double> v(dims_, 0.0);
  // ordered so bucket sums are accumulated in a fixed order
  std::map<std::string, double> tf;
  for (auto& w : mock::tokenize(text)) tf[std::move(w)] += 1.0;
  for (const auto& [w, count] : tf) {
    auto it = df_.find(w);
    const double df = it == df_.end() ? 0.0 : it->second;
    const double idf = std::log((1.0 + n_docs_) / (1.0 + df)) + 1.0;
    v[fnv1a64(w) % dims_] += count * idf;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::vector<std::vector<double>> TfidfEmbedder::embed(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

std::vector<std::vector<double>> ProviderEmbedder::embed(std::span<const std::string> texts) {
  auto out = client_.embed(texts);
  if (out.size() != texts.size()) throw ProtocolError("embedding count does not match input count");
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace icp::provider
