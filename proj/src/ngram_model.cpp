#include "icp_audit/ngram_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "icp_audit/digest.hpp"
#include "icp_audit/errors.hpp"
#include "icp_audit/probes.hpp"
#include "icp_audit/rng.hpp"
#include "icp_audit/tokenizer.hpp"

namespace icp::mock {

using nlohmann::json;

std::size_t HistoryHash::operator()(const History& h) const noexcept {
  std::uint64_t x = 0x84222325cbf29ce4ULL ^ h.size();
  for (auto id : h) x = splitmix64(x ^ id);
  return static_cast<std::size_t>(x);
}

std::string training_text(const corpus::Sample& sample) { return probes::render_full(sample); }

namespace {

void check_params(const ModelParams& p) {
  if (p.order < 1) throw ConfigError("n-gram order must be >= 1");
  if (!(p.alpha > 0)) throw ConfigError("alpha must be > 0");
  if (!(p.lambda_ctx >= 0)) throw ConfigError("lambda_ctx must be >= 0");
  if (!(p.eta >= 0)) throw ConfigError("eta must be >= 0");
}

// Effective count lookup with optional context interpolation.
struct EffectiveRow {
  const CountRow* base = nullptr;
  const CountRow* ctx = nullptr;
  double lambda = 0;

  double count(TokenId t) const {
    double c = base ? base->count(t) : 0.0;
    if (ctx && lambda != 0) c += lambda * ctx->count(t);
    return c;
  }
  double total() const {
    double c = base ? base->total : 0.0;
    if (ctx && lambda != 0) c += lambda * ctx->total;
    return c;
  }
};

const CountRow* find_row(const CountTable& table, std::span<const TokenId> history) {
  // the lookup key has to be an owning History
  thread_local History key;
  key.assign(history.begin(), history.end());
  auto it = table.find(key);
  return it == table.end() ? nullptr : &it->second;
}

}  // namespace

void NGramModel::build_vocab(const std::vector<std::vector<std::string>>& streams) {
  std::set<std::string> words;
  for (const auto& s : streams) words.insert(s.begin(), s.end());
  words.insert(std::string(kUnkToken));
  words.insert(std::string(kMaskToken));
  words.insert(std::string(kPadToken));
  vocab_.assign(words.begin(), words.end());
  index_.clear();
  for (TokenId i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
  pad_ = index_.at(std::string(kPadToken));
  unk_ = index_.at(std::string(kUnkToken));
}

TokenId NGramModel::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

std::vector<TokenId> NGramModel::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<TokenId> NGramModel::padded(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids(static_cast<std::size_t>(params_.order - 1), pad_);
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

void NGramModel::accumulate(CountTable& table, std::span<const TokenId> stream, double weight) const {
  const auto h = static_cast<std::size_t>(params_.order - 1);
  for (std::size_t i = h; i < stream.size(); ++i) {
    History key(stream.begin() + static_cast<std::ptrdiff_t>(i - h), stream.begin() + static_cast<std::ptrdiff_t>(i));
    auto& row = table[std::move(key)];
    row.next[stream[i]] += weight;
    row.total += weight;
  }
}

NGramModel NGramModel::fit_streams(std::span<const std::string> texts, ModelParams params) {
  check_params(params);
  if (texts.empty()) throw FitError("cannot fit an n-gram model on an empty corpus");
  NGramModel m;
  m.params_ = params;
  std::vector<std::vector<std::string>> streams;
  streams.reserve(texts.size());
  for (const auto& t : texts) streams.push_back(tokenize(t));
  m.build_vocab(streams);
  for (const auto& s : streams) m.accumulate(m.counts_, m.padded(s), 1.0);
  m.finalize();
  return m;
}

NGramModel NGramModel::fit(const corpus::SampleSet& corpus, ModelParams params) {
  if (corpus.empty()) throw FitError("cannot fit an n-gram model on an empty corpus");
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& s : corpus.samples) texts.push_back(training_text(s));
  return fit_streams(texts, params);
}

double NGramModel::count(const History& h, TokenId t) const {
  auto it = counts_.find(h);
  return it == counts_.end() ? 0.0 : it->second.count(t);
}

double NGramModel::total(const History& h) const {
  auto it = counts_.find(h);
  return it == counts_.end() ? 0.0 : it->second.total;
}

double NGramModel::cond_logprob(std::span<const TokenId> history, TokenId token,
                                const ContextCounts* ctx) const {
  if (history.size() != static_cast<std::size_t>(params_.order - 1))
    throw ShapeError("history length must equal order - 1");
  EffectiveRow row{find_row(counts_, history), ctx ? find_row(ctx->table, history) : nullptr,
                   params_.lambda_ctx};
  const double v = static_cast<double>(predictive_vocab_size());
  return std::log((row.count(token) + params_.alpha) / (row.total() + params_.alpha * v));
}

double NGramModel::cond_logprob(std::span<const std::string> history, std::string_view token,
                                const ContextCounts* ctx) const {
  return cond_logprob(encode(history), id(token), ctx);
}

provider::Moment NGramModel::moments(std::span<const TokenId> history, const ContextCounts* ctx) const {
  EffectiveRow row{find_row(counts_, history), ctx ? find_row(ctx->table, history) : nullptr,
                   params_.lambda_ctx};
  const double alpha = params_.alpha;
  const double denom = row.total() + alpha * static_cast<double>(predictive_vocab_size());

  // tokens with a nonzero effective count; everything else shares p0
  std::vector<double> probs;
  std::set<TokenId> seen;
  auto visit = [&](const CountRow* r) {
    if (!r) return;
    for (const auto& [t, c] : r->next) {
      if (seen.insert(t).second) probs.push_back((row.count(t) + alpha) / denom);
    }
  };
  visit(row.base);
  if (params_.lambda_ctx != 0) visit(row.ctx);

  const double p0 = alpha / denom;
  const double n0 = static_cast<double>(predictive_vocab_size() - seen.size());
  const double lp0 = std::log(p0);

  double mu = n0 * p0 * lp0;
  for (double p : probs) mu += p * std::log(p);
  double var = n0 * p0 * (lp0 - mu) * (lp0 - mu);
  for (double p : probs) {
    const double d = std::log(p) - mu;
    var += p * d * d;
  }
  return {mu, std::sqrt(std::max(0.0, var))};
}

ContextCounts NGramModel::context_counts(std::string_view context_text) const {
  ContextCounts ctx;
  const auto tokens = tokenize(context_text);
  accumulate(ctx.table, padded(tokens), 1.0);
  return ctx;
}

provider::ScoredResponse NGramModel::score(const provider::ScoreRequest& req, bool full_dist) const {
  const auto response_tokens = tokenize(req.response);
  if (response_tokens.empty()) throw ProtocolError("response has no tokens after tokenization");

  std::optional<ContextCounts> ctx;
  std::string head;
  if (req.context) {
    ctx = context_counts(*req.context);
    head = probes::join_probe(*req.context, req.prompt);
  } else {
    head = req.prompt;
  }
  auto stream = padded(tokenize(head));
  const auto first = stream.size();
  for (const auto& t : response_tokens) stream.push_back(id(t));

  const auto h = static_cast<std::size_t>(params_.order - 1);
  const ContextCounts* cptr = ctx ? &*ctx : nullptr;

  provider::ScoredResponse sr;
  sr.model_id = model_id();
  sr.tokens = response_tokens;
  sr.logprobs.reserve(response_tokens.size());
  if (full_dist) sr.moments.emplace();
  for (std::size_t i = first; i < stream.size(); ++i) {
    std::span<const TokenId> hist(stream.data() + (i - h), h);
    sr.logprobs.push_back(cond_logprob(hist, stream[i], cptr));
    if (full_dist) sr.moments->push_back(moments(hist, cptr));
  }
  return sr;
}

NGramModel NGramModel::train_step(const corpus::Sample& sample, double eta) const {
  if (!(eta > 0)) throw ConfigError("train_step needs eta > 0");
  NGramModel next = *this;
  const auto tokens = tokenize(training_text(sample));
  accumulate(next.counts_, padded(tokens), eta);
  next.finalize();
  return next;
}

NGramModel NGramModel::with_lambda(double lambda_ctx) const {
  NGramModel next = *this;
  next.params_.lambda_ctx = lambda_ctx;
  check_params(next.params_);
  next.finalize();
  return next;
}

json NGramModel::to_json() const {
  // canonical form: histories and continuations sorted by token text
  std::vector<std::pair<std::vector<std::string>, const CountRow*>> rows;
  rows.reserve(counts_.size());
  for (const auto& [h, row] : counts_) {
    std::vector<std::string> words;
    for (auto id : h) words.push_back(vocab_[id]);
    rows.emplace_back(std::move(words), &row);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  json counts = json::array();
  for (const auto& [words, row] : rows) {
    // ids are assigned in sorted vocab order, so map order is text order
    json next = json::array();
    for (const auto& [t, c] : row->next) next.push_back(json::array({vocab_[t], c}));
    counts.push_back(json::array({words, std::move(next)}));
  }
  return {{"order", params_.order},   {"alpha", params_.alpha}, {"lambda_ctx", params_.lambda_ctx},
          {"eta", params_.eta},       {"vocab", vocab_},        {"counts", std::move(counts)}};
}

NGramModel NGramModel::from_json(const json& j) {
  NGramModel m;
  try {
    m.params_.order = j.at("order").get<int>();
    m.params_.alpha = j.at("alpha").get<double>();
    m.params_.lambda_ctx = j.at("lambda_ctx").get<double>();
    m.params_.eta = j.value("eta", 1.0);
    check_params(m.params_);
    auto vocab = j.at("vocab").get<std::vector<std::string>>();
    std::vector<std::vector<std::string>> streams{vocab};
    m.build_vocab(streams);
    if (m.vocab_.size() != vocab.size()) throw FitError("model vocab is not a sorted set of tokens");
    for (const auto& entry : j.at("counts")) {
      History h;
      for (const auto& w : entry.at(0)) {
        auto it = m.index_.find(w.get<std::string>());
        if (it == m.index_.end()) throw FitError("history token outside vocab");
        h.push_back(it->second);
      }
      if (h.size() != static_cast<std::size_t>(m.params_.order - 1)) throw FitError("bad history length");
      auto& row = m.counts_[h];
      for (const auto& pair : entry.at(1)) {
        auto it = m.index_.find(pair.at(0).get<std::string>());
        if (it == m.index_.end()) throw FitError("continuation token outside vocab");
        const double c = pair.at(1).get<double>();
        if (!(c >= 0)) throw FitError("negative count");
        row.next[it->second] += c;
        row.total += c;
      }
    }
  } catch (const json::exception& e) {
    throw FitError(std::string("malformed model JSON: ") + e.what());
  }
  m.finalize();
  return m;
}

std::string NGramModel::digest() const { return sha256_hex(to_json().dump()); }

void NGramModel::finalize() { model_id_ = "mock-ngram-" + digest().substr(0, 16); }

}  // namespace icp::mock
