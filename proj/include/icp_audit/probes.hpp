#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "icp_audit/corpus.hpp"
#include "icp_audit/embed.hpp"
#include "icp_audit/provider.hpp"

namespace icp::probes {

enum class Strategy { random_mask, min_k_mask, max_k_mask, reference, generated };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view text);

/// A prefix C prepended to the rendered prompt.
struct ProbeContext {
  std::string text;
  Strategy strategy = Strategy::random_mask;
  std::optional<std::string> source_id;
  std::optional<double> mask_rate;
  std::optional<std::uint64_t> seed;

  bool operator==(const ProbeContext&) const = default;
};

struct RenderedSample {
  std::string prompt;
  std::string response;
};

inline constexpr std::string_view kProbeSeparator = "\n\n";
inline constexpr std::string_view kMask = "[MASK]";

/// `Instruction: {instruction}\nQuestion: {input}\nAnswer:` and ` {output}`.
/// The Question line is dropped for an empty input.
RenderedSample render(const corpus::Sample& sample);
/// prompt immediately followed by response
std::string render_full(const corpus::Sample& sample);
/// context + "\n\n" + prompt
std::string join_probe(std::string_view context, std::string_view prompt);

/// Whitespace-separated words of the raw output, the masking unit.
std::vector<std::string> response_words(std::string_view output);

/// floor(p * L), tolerant of binary representation error in p.
std::size_t mask_count(double p, std::size_t length);

/// Rendered prompt followed by the response with the given word positions
/// replaced by `[MASK]`.
std::string masked_probe_text(const corpus::Sample& sample, std::span<const std::size_t> positions);

/// floor(pL) distinct positions chosen uniformly by `seed`.
ProbeContext random_mask_probe(const corpus::Sample& sample, double p, std::uint64_t seed);

/// K random-mask probes with per-probe seeds derived from (seed, sample id, j).
std::vector<ProbeContext> random_mask_probes(const corpus::Sample& sample, double p, std::size_t k,
                                             std::uint64_t seed);

enum class LlMode { min, max };

/// Positions of the floor(pL) lowest (min) or highest (max) values; ties go to
/// the lower index. Returned in ascending position order.
std::vector<std::size_t> ll_mask_positions(std::span<const double> token_lls, double p, LlMode mode);

/// Throws ShapeError when token_lls does not have one entry per response word.
ProbeContext ll_mask_probe(const corpus::Sample& sample, std::span<const double> token_lls, double p,
                           LlMode mode);

/// Embedding index over a reference pool, built once and queried per target.
class ReferenceIndex {
 public:
  ReferenceIndex(const corpus::SampleSet& pool, provider::Embedder& embedder);

  /// Top-K pool samples by cosine similarity to the target's prompt+response,
  /// ties by lower pool index. Clamps K to the pool size and sets `warning`.
  std::vector<ProbeContext> probes_for(const corpus::Sample& target, std::size_t k,
                                       std::string* warning = nullptr) const;

  std::size_t size() const noexcept { return pool_.size(); }

 private:
  const corpus::SampleSet& pool_;
  provider::Embedder& embedder_;
  std::vector<std::vector<double>> vectors_;
};

std::vector<ProbeContext> reference_probes(const corpus::Sample& target, const corpus::SampleSet& pool,
                                           std::size_t k, provider::Embedder& embedder,
                                           std::string* warning = nullptr);

/// The editing instruction sent to the generator, with `original` appended.
std::string perturbation_prompt(std::string_view original);

/// K rendered (x, y'_j) pairs from the provider's generator.
std::vector<ProbeContext> generated_probes(const corpus::Sample& target, std::size_t k,
                                           provider::ScoringClient& client, double temperature,
                                           std::uint64_t seed);

// Probe-set persistence: one JSON object per line.
nlohmann::json to_json(const std::string& sample_id, const ProbeContext& probe);
std::pair<std::string, ProbeContext> probe_from_json(const nlohmann::json& j);

}  // namespace icp::probes
