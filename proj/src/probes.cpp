#include "icp_audit/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icp_audit/errors.hpp"
#include "icp_audit/rng.hpp"

namespace icp::probes {

using nlohmann::json;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random_mask:
      return "random_mask";
    case Strategy::min_k_mask:
      return "min_k_mask";
    case Strategy::max_k_mask:
      return "max_k_mask";
    case Strategy::reference:
      return "reference";
    case Strategy::generated:
      return "generated";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view text) {
  for (auto s : {Strategy::random_mask, Strategy::min_k_mask, Strategy::max_k_mask, Strategy::reference,
                 Strategy::generated}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

RenderedSample render(const corpus::Sample& sample) {
  RenderedSample r;
  r.prompt = "Instruction: " + sample.instruction + "\n";
  if (!sample.input.empty()) r.prompt += "Question: " + sample.input + "\n";
  r.prompt += "Answer:";
  r.response = " " + sample.output;
  return r;
}

std::string render_full(const corpus::Sample& sample) {
  auto r = render(sample);
  return r.prompt + r.response;
}

std::string join_probe(std::string_view context, std::string_view prompt) {
  std::string out;
  out.reserve(context.size() + kProbeSeparator.size() + prompt.size());
  out.append(context).append(kProbeSeparator).append(prompt);
  return out;
}

std::vector<std::string> response_words(std::string_view output) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  while (i < output.size()) {
    while (i < output.size() && is_space(output[i])) ++i;
    std::size_t j = i;
    while (j < output.size() && !is_space(output[j])) ++j;
    if (j > i) words.emplace_back(output.substr(i, j - i));
    i = j;
  }
  return words;
}

std::size_t mask_count(double p, std::size_t length) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask rate must lie in [0, 1]");
  // 0.7 * 10 must give 7 even though 0.7 is not representable
  const auto n = static_cast<std::size_t>(std::floor(p * static_cast<double>(length) + 1e-9));
  return std::min(n, length);
}

std::string masked_probe_text(const corpus::Sample& sample, std::span<const std::size_t> positions) {
  auto words = response_words(sample.output);
  for (auto pos : positions) {
    if (pos >= words.size()) throw ShapeError("mask position out of range");
    words[pos] = std::string(kMask);
  }
  std::string masked;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) masked += ' ';
    masked += words[i];
  }
  return render(sample).prompt + " " + masked;
}

ProbeContext random_mask_probe(const corpus::Sample& sample, double p, std::uint64_t seed) {
  const auto words = response_words(sample.output);
  if (words.empty()) throw ValidationError("sample '" + sample.id + "' has no response words to mask");
  const auto n = mask_count(p, words.size());
  Rng rng(seed);
  auto positions = sample_indices(words.size(), n, rng);
  std::sort(positions.begin(), positions.end());

  ProbeContext probe;
  probe.text = masked_probe_text(sample, positions);
  probe.strategy = Strategy::random_mask;
  probe.mask_rate = p;
  probe.seed = seed;
  return probe;
}

std::vector<ProbeContext> random_mask_probes(const corpus::Sample& sample, double p, std::size_t k,
                                             std::uint64_t seed) {
  std::vector<ProbeContext> out;
  out.reserve(k);
  const auto sample_hash = fnv1a64(sample.id);
  for (std::size_t j = 0; j < k; ++j) out.push_back(random_mask_probe(sample, p, derive_seed(seed, sample_hash, j)));
  return out;
}

std::vector<std::size_t> ll_mask_positions(std::span<const double> token_lls, double p, LlMode mode) {
  const auto n = mask_count(p, token_lls.size());
  std::vector<std::size_t> order(token_lls.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mode == LlMode::min ? token_lls[a] < token_lls[b] : token_lls[a] > token_lls[b];
  });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

ProbeContext ll_mask_probe(const corpus::Sample& sample, std::span<const double> token_lls, double p,
                           LlMode mode) {
  const auto words = response_words(sample.output);
  if (token_lls.size() != words.size()) {
    throw ShapeError("sample '" + sample.id + "': " + std::to_string(token_lls.size()) +
                     " token log-likelihoods for " + std::to_string(words.size()) + " response words");
  }
  const auto positions = ll_mask_positions(token_lls, p, mode);
  ProbeContext probe;
  probe.text = masked_probe_text(sample, positions);
  probe.strategy = mode == LlMode::min ? Strategy::min_k_mask : Strategy::max_k_mask;
  probe.mask_rate = p;
  return probe;
}

ReferenceIndex::ReferenceIndex(const corpus::SampleSet& pool, provider::Embedder& embedder)
    : pool_(pool), embedder_(embedder) {
  if (pool.empty()) throw ConfigError("reference pool is empty");
  std::vector<std::string> texts;
  texts.reserve(pool.size());
  for (const auto& s : pool.samples) texts.push_back(render_full(s));
  vectors_ = embedder_.embed(texts);
  if (vectors_.size() != texts.size()) throw ProtocolError("embedder returned the wrong number of vectors");
}

std::vector<ProbeContext> ReferenceIndex::probes_for(const corpus::Sample& target, std::size_t k,
                                                     std::string* warning) const {
  const std::string text = render_full(target);
  const auto query = embedder_.embed(std::span<const std::string>(&text, 1)).at(0);

  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(vectors_.size());
  for (std::size_t i = 0; i < vectors_.size(); ++i) ranked.emplace_back(provider::cosine(query, vectors_[i]), i);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  if (k > ranked.size() && warning) {
    *warning = "requested " + std::to_string(k) + " reference probes but the pool holds only " +
               std::to_string(ranked.size());
  }
  const auto n = std::min(k, ranked.size());
  std::vector<ProbeContext> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& s = pool_.samples[ranked[j].second];
    ProbeContext probe;
    probe.text = render_full(s);
    probe.strategy = Strategy::reference;
    probe.source_id = s.id;
    out.push_back(std::move(probe));
  }
  return out;
}

std::vector<ProbeContext> reference_probes(const corpus::Sample& target, const corpus::SampleSet& pool,
                                           std::size_t k, provider::Embedder& embedder, std::string* warning) {
  return ReferenceIndex(pool, embedder).probes_for(target, k, warning);
}

std::string perturbation_prompt(std::string_view original) {
  std::string prompt =
      "You are a precise editor. Given the original text, generate a new text in which exactly 20 words "
      "are changed (added, removed, or replaced), but the overall meaning remains identical. Do not "
      "change more than 20 tokens. Output only the new text.\n\nOriginal text: ";
  prompt.append(original);
  return prompt;
}

std::vector<ProbeContext> generated_probes(const corpus::Sample& target, std::size_t k,
                                           provider::ScoringClient& client, double temperature,
                                           std::uint64_t seed) {
  if (k == 0) return {};
  provider::GenerateRequest req;
  req.prompt = perturbation_prompt(target.output);
  req.n = k;
  req.temperature = temperature;
  req.seed = derive_seed(seed, fnv1a64(target.id));
  const auto variants = client.generate(req);

  const auto prompt = render(target).prompt;
  std::vector<ProbeContext> out;
  out.reserve(variants.size());
  for (std::size_t j = 0; j < variants.size(); ++j) {
    ProbeContext probe;
    probe.text = prompt + " " + variants[j];
    probe.strategy = Strategy::generated;
    probe.source_id = client.model_id() + ":" + std::to_string(j);
    probe.seed = req.seed;
    out.push_back(std::move(probe));
  }
  return out;
}

json to_json(const std::string& sample_id, const ProbeContext& probe) {
  json j;
  j["sample_id"] = sample_id;
  j["strategy"] = std::string(to_string(probe.strategy));
  j["text"] = probe.text;
  j["mask_rate"] = probe.mask_rate ? json(*probe.mask_rate) : json(nullptr);
  j["seed"] = probe.seed ? json(*probe.seed) : json(nullptr);
  j["source_id"] = probe.source_id ? json(*probe.source_id) : json(nullptr);
  return j;
}

std::pair<std::string, ProbeContext> probe_from_json(const json& j) {
  ProbeContext probe;
  std::string sample_id;
  try {
    sample_id = j.at("sample_id").get<std::string>();
    auto strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (!strategy) throw ValidationError("unknown probe strategy");
    probe.strategy = *strategy;
    probe.text = j.at("text").get<std::string>();
    if (auto it = j.find("mask_rate"); it != j.end() && !it->is_null()) probe.mask_rate = it->get<double>();
    if (auto it = j.find("seed"); it != j.end() && !it->is_null()) probe.seed = it->get<std::uint64_t>();
    if (auto it = j.find("source_id"); it != j.end() && !it->is_null()) probe.source_id = it->get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed probe record: ") + e.what());
  }
  if (probe.text.empty()) throw ValidationError("probe text is empty");
  return {std::move(sample_id), std::move(probe)};
}

}  // namespace icp::probes
