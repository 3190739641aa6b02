#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "icp_audit/corpus.hpp"
#include "icp_audit/provider.hpp"

namespace icp::mock {

using TokenId = std::uint32_t;
using History = std::vector<TokenId>;

struct HistoryHash {
  std::size_t operator()(const History& h) const noexcept;
};

/// Counts of one history's continuations, plus their sum.
struct CountRow {
  std::map<TokenId, double> next;
  double total = 0;

  double count(TokenId t) const {
    auto it = next.find(t);
    return it == next.end() ? 0.0 : it->second;
  }
};

using CountTable = std::unordered_map<History, CountRow, HistoryHash>;

struct ModelParams {
  int order = 2;
  double alpha = 0.1;
  /// Weight of context-derived counts at scoring time (the in-context channel).
  double lambda_ctx = 1.0;
  /// Default count weight added by train_step.
  double eta = 1.0;
};

/// n-gram counts harvested from a probe context, windowed with the model order.
struct ContextCounts {
  CountTable table;
};

/// Fixed-order add-alpha n-gram model.
///
///   p(t | h) = (c(h,t) + alpha) / (C(h) + alpha * V)
///
/// where V is the number of predictable tokens (the vocabulary minus the
/// begin-of-stream pad, which only ever appears in histories). When a probe
/// context is supplied, c and C become c + lambda * c_ctx and C + lambda * C_ctx.
///
/// Values are immutable; train_step and with_lambda return new models.
class NGramModel {
 public:
  /// Each sample contributes its rendered prompt+response stream.
  static NGramModel fit(const corpus::SampleSet& corpus, ModelParams params);
  /// Each text is one stream. Used for hand-checkable fixtures.
  static NGramModel fit_streams(std::span<const std::string> texts, ModelParams params);

  static NGramModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// SHA-256 of the canonical JSON form.
  std::string digest() const;
  /// "mock-ngram-" + first 16 hex digits of the digest.
  const std::string& model_id() const noexcept { return model_id_; }

  int order() const noexcept { return params_.order; }
  double alpha() const noexcept { return params_.alpha; }
  double lambda_ctx() const noexcept { return params_.lambda_ctx; }
  double eta() const noexcept { return params_.eta; }
  const ModelParams& params() const noexcept { return params_; }

  /// Sorted; contains `<unk>`, `[MASK]` and the pad token.
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  /// V in the smoothing denominator.
  std::size_t predictive_vocab_size() const noexcept { return vocab_.size() - 1; }
  const CountTable& counts() const noexcept { return counts_; }

  /// Unseen tokens map to `<unk>`.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return vocab_.at(id); }
  TokenId pad_id() const noexcept { return pad_; }
  TokenId unk_id() const noexcept { return unk_; }
  std::vector<TokenId> encode(std::span<const std::string> tokens) const;

  double count(const History& h, TokenId t) const;
  double total(const History& h) const;

  /// ln p(token | history). `history` must hold exactly order-1 ids.
  double cond_logprob(std::span<const TokenId> history, TokenId token,
                      const ContextCounts* ctx = nullptr) const;
  /// String form; history tokens may include the pad token.
  double cond_logprob(std::span<const std::string> history, std::string_view token,
                      const ContextCounts* ctx = nullptr) const;

  /// Mean and standard deviation of ln p(z|h) over the predictable vocabulary.
  provider::Moment moments(std::span<const TokenId> history, const ContextCounts* ctx = nullptr) const;

  ContextCounts context_counts(std::string_view context_text) const;

  /// Scores the response tokens of context ⊕ prompt ⊕ response.
  provider::ScoredResponse score(const provider::ScoreRequest& req, bool full_dist) const;

  /// c'(h,t) = c(h,t) + eta * occurrences of (h,t) in the sample's stream.
  NGramModel train_step(const corpus::Sample& sample, double eta) const;
  NGramModel train_step(const corpus::Sample& sample) const { return train_step(sample, params_.eta); }

  NGramModel with_lambda(double lambda_ctx) const;

 private:
  NGramModel() = default;
  void build_vocab(const std::vector<std::vector<std::string>>& streams);
  void accumulate(CountTable& table, std::span<const TokenId> stream, double weight) const;
  std::vector<TokenId> padded(std::span<const std::string> tokens) const;
  void finalize();

  ModelParams params_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = 0;
  TokenId unk_ = 0;
  CountTable counts_;
  std::string model_id_;
};

/// The token stream the model trains on for one sample.
std::string training_text(const corpus::Sample& sample);

}  // namespace icp::mock
