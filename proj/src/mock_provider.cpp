#include "icp_audit/mock_provider.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "icp_audit/errors.hpp"
#include "icp_audit/probes.hpp"
#include "icp_audit/rng.hpp"
#include "icp_audit/tokenizer.hpp"

namespace icp::mock {

std::string extract_original(std::string_view prompt) {
  constexpr std::string_view kMarker = "Original text:";
  auto pos = prompt.rfind(kMarker);
  if (pos == std::string_view::npos) return std::string(prompt);
  auto rest = prompt.substr(pos + kMarker.size());
  while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\n')) rest.remove_prefix(1);
  return std::string(rest);
}

MockProvider::MockProvider(NGramModel model, const corpus::SampleSet* embed_corpus, GeneratorOptions gen)
    : model_(std::move(model)), gen_(gen) {
  if (embed_corpus) {
    std::vector<std::string> docs;
    docs.reserve(embed_corpus->size());
    for (const auto& s : embed_corpus->samples) docs.push_back(probes::render_full(s));
    embedder_ = std::make_unique<provider::TfidfEmbedder>(docs);
  }

  std::vector<double> freq(model_.vocab().size(), 0.0);
  for (const auto& [h, row] : model_.counts()) {
    for (const auto& [t, c] : row.next) freq[t] += c;
  }
  const auto mask = model_.id(kMaskToken);
  for (TokenId t = 0; t < freq.size(); ++t) {
    if (t == model_.pad_id() || t == model_.unk_id() || t == mask || freq[t] <= 0) continue;
    const auto& w = model_.token(t);
    if (w == "instruction:" || w == "question:" || w == "answer:") continue;
    unigram_.emplace_back(t, freq[t]);
  }
}

provider::Capabilities MockProvider::capabilities() {
  provider::Capabilities caps;
  caps.score = true;
  caps.full_dist = true;
  caps.embed = embedder_ != nullptr;
  caps.generate = !unigram_.empty();
  caps.model_id = model_.model_id();
  return caps;
}

provider::ScoredResponse MockProvider::score(const provider::ScoreRequest& req, bool full_dist) {
  return model_.score(req, full_dist);
}

std::vector<std::vector<double>> MockProvider::embed(std::span<const std::string> texts) {
  if (!embedder_) throw CapabilityError("mock provider was built without an embedding corpus");
  return embedder_->embed(texts);
}

std::vector<std::string> MockProvider::generate(const provider::GenerateRequest& req) {
  if (unigram_.empty()) throw CapabilityError("mock provider has no vocabulary to generate from");
  const auto words = probes::response_words(extract_original(req.prompt));

  // sharpened unigram CDF
  std::vector<double> cdf(unigram_.size());
  std::size_t argmax = 0;
  double acc = 0;
  for (std::size_t i = 0; i < unigram_.size(); ++i) {
    if (unigram_[i].second > unigram_[argmax].second) argmax = i;
    if (req.temperature > 0) acc += std::pow(unigram_[i].second, 1.0 / req.temperature);
    cdf[i] = acc;
  }

  const auto prompt_hash = fnv1a64(req.prompt);
  const auto temp_bits = std::bit_cast<std::uint64_t>(req.temperature);
  std::vector<std::string> out;
  out.reserve(req.n);
  for (std::size_t j = 0; j < req.n; ++j) {
    Rng rng(derive_seed(req.seed, prompt_hash, temp_bits, j));
    auto variant = words;
    const auto n_swap = std::min(gen_.words_changed, variant.size());
    for (auto pos : sample_indices(variant.size(), n_swap, rng)) {
      std::size_t pick = argmax;
      if (req.temperature > 0 && acc > 0) {
        const double u = uniform_unit(rng) * acc;
        pick = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        pick = std::min(pick, cdf.size() - 1);
      }
      variant[pos] = model_.token(unigram_[pick].first);
    }
    std::string text;
    for (std::size_t i = 0; i < variant.size(); ++i) {
      if (i) text += ' ';
      text += variant[i];
    }
    out.push_back(std::move(text));
  }
  return out;
}

}  // namespace icp::mock
