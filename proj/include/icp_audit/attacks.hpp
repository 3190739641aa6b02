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
#include "icp_audit/ngram_model.hpp"
#include "icp_audit/probes.hpp"
#include "icp_audit/provider.hpp"

namespace icp::attacks {

enum class AttackKind { icp_sp, icp_ref, loss, zlib, mink, minkpp, recall };

std::string_view to_string(AttackKind kind);
std::optional<AttackKind> parse_attack(std::string_view text);
std::vector<AttackKind> all_attacks();

/// Every score is oriented so that a larger value means "more likely a member".
struct AttackScore {
  std::string sample_id;
  AttackKind attack = AttackKind::loss;
  double score = 0;
  corpus::Label label = corpus::Label::unknown;
  nlohmann::json details = nlohmann::json::object();
};

/// Score-dump JSONL record.
nlohmann::json to_json(const AttackScore& s);
AttackScore attack_score_from_json(const nlohmann::json& j);

/// Sum matches the likelihood definitions; mean is the length-normalized ablation.
enum class LlReduction { sum, mean };

double reduce_ll(const provider::ScoredResponse& sr, LlReduction how);

provider::ScoreRequest baseline_request(const corpus::Sample& sample);
provider::ScoreRequest probed_request(const corpus::Sample& sample, std::string_view context);

/// LL(y|x) - LL(y|C+x). Negative when the probe raises the response likelihood.
double icp_score(const corpus::Sample& sample, const probes::ProbeContext& probe,
                 provider::ScoringClient& client, LlReduction how = LlReduction::sum);

struct MinResult {
  double value = 0;
  std::size_t index = 0;
};
/// Minimum with ties going to the first index. Throws ConfigError when empty.
MinResult aggregate_min(std::span<const double> scores);

/// Minimum ICP score over the candidate probes. The baseline is scored once
/// and shared by every probe.
AttackScore final_score(const corpus::Sample& sample, std::span<const probes::ProbeContext> probes,
                        provider::ScoringClient& client, AttackKind kind = AttackKind::icp_sp,
                        LlReduction how = LlReduction::sum);

AttackScore loss_attack(const corpus::Sample& sample, provider::ScoringClient& client);

/// Byte length of zlib-format output at the default compression level.
std::size_t zlib_size(std::string_view text);
AttackScore zlib_attack(const corpus::Sample& sample, provider::ScoringClient& client);

inline constexpr double kDefaultKPercent = 20.0;

/// n = max(1, floor(k/100 * L)).
std::size_t mink_count(double k_percent, std::size_t length);
/// Mean of the n smallest values.
double mink_score(std::span<const double> logprobs, double k_percent);
AttackScore mink_attack(const corpus::Sample& sample, provider::ScoringClient& client,
                        double k_percent = kDefaultKPercent);

inline constexpr double kSigmaFloor = 1e-6;

/// Mean of the n smallest z_t = (l_t - mu_t) / max(sigma_t, 1e-6).
double minkpp_score(std::span<const double> logprobs, std::span<const provider::Moment> moments,
                    double k_percent);
/// Throws CapabilityError when the provider has no full_dist support.
AttackScore minkpp_attack(const corpus::Sample& sample, provider::ScoringClient& client,
                          double k_percent = kDefaultKPercent);

inline constexpr std::size_t kDefaultShots = 7;

/// `shots` rendered pool samples, chosen by a seeded shuffle, joined by a blank line.
std::string recall_prefix(const corpus::SampleSet& pool, std::size_t shots, std::uint64_t seed);
/// LL(y|P+x) / LL(y|x).
double recall_ratio(double ll_prefixed, double ll_original);
AttackScore recall_attack(const corpus::Sample& sample, std::string_view prefix, provider::ScoringClient& client);
AttackScore recall_attack(const corpus::Sample& sample, const corpus::SampleSet& prefix_pool, std::size_t shots,
                          std::uint64_t seed, provider::ScoringClient& client);

struct ProxyPoint {
  std::string sample_id;
  corpus::Label label = corpus::Label::unknown;
  double true_gain = 0;  ///< LL after one train step minus LL before
  double icp_gain = 0;   ///< -final_score
};

struct ProxyResult {
  double rho = 0;
  std::vector<ProxyPoint> points;
};

struct ProxyOptions {
  double eta = 1.0;
  /// Replace the ICP gains by the true gains (harness self-check, rho = 1).
  bool self_test = false;
};

/// Spearman correlation between the true one-step gain (from train_step) and
/// the ICP-induced gain, over a cohort scored by the mock model.
/// `probes_per_sample[i]` are the probes for `cohort[i]`.
ProxyResult validate_proxy(std::span<const corpus::Sample> cohort,
                           std::span<const std::vector<probes::ProbeContext>> probes_per_sample,
                           const mock::NGramModel& model, ProxyOptions options = {});

}  // namespace icp::attacks
