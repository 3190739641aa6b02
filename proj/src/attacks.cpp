#include "icp_audit/attacks.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "icp_audit/errors.hpp"
#include "icp_audit/metrics.hpp"
#include "icp_audit/mock_provider.hpp"
#include "icp_audit/rng.hpp"

namespace icp::attacks {

using nlohmann::json;
using provider::ScoredResponse;
using provider::ScoreRequest;

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::icp_sp:
      return "icp_sp";
    case AttackKind::icp_ref:
      return "icp_ref";
    case AttackKind::loss:
      return "loss";
    case AttackKind::zlib:
      return "zlib";
    case AttackKind::mink:
      return "mink";
    case AttackKind::minkpp:
      return "minkpp";
    case AttackKind::recall:
      return "recall";
  }
  return "unknown";
}

std::vector<AttackKind> all_attacks() {
  return {AttackKind::icp_sp, AttackKind::icp_ref, AttackKind::loss,  AttackKind::zlib,
          AttackKind::mink,   AttackKind::minkpp,  AttackKind::recall};
}

std::optional<AttackKind> parse_attack(std::string_view text) {
  for (auto k : all_attacks()) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

json to_json(const AttackScore& s) {
  return {{"sample_id", s.sample_id},
          {"attack", std::string(to_string(s.attack))},
          {"score", s.score},
          {"label", std::string(corpus::to_string(s.label))},
          {"details", s.details}};
}

AttackScore attack_score_from_json(const json& j) {
  AttackScore s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    auto kind = parse_attack(j.at("attack").get<std::string>());
    if (!kind) throw ValidationError("unknown attack '" + j.at("attack").get<std::string>() + "'");
    s.attack = *kind;
    s.score = j.at("score").get<double>();
    s.label = corpus::parse_label(j.value("label", std::string{})).value_or(corpus::Label::unknown);
    s.details = j.value("details", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed score record: ") + e.what());
  }
  return s;
}

double reduce_ll(const ScoredResponse& sr, LlReduction how) {
  return how == LlReduction::sum ? provider::sum_ll(sr) : provider::mean_ll(sr);
}

ScoreRequest baseline_request(const corpus::Sample& sample) {
  auto r = probes::render(sample);
  return {std::nullopt, std::move(r.prompt), std::move(r.response)};
}

ScoreRequest probed_request(const corpus::Sample& sample, std::string_view context) {
  auto r = probes::render(sample);
  return {std::string(context), std::move(r.prompt), std::move(r.response)};
}

double icp_score(const corpus::Sample& sample, const probes::ProbeContext& probe, provider::ScoringClient& client,
                 LlReduction how) {
  if (probe.text.empty()) throw ConfigError("probe text is empty");
  const double base = reduce_ll(client.score_conditional(baseline_request(sample)), how);
  const double probed = reduce_ll(client.score_conditional(probed_request(sample, probe.text)), how);
  return base - probed;
}

MinResult aggregate_min(std::span<const double> scores) {
  if (scores.empty()) throw ConfigError("final score needs at least one probe");
  MinResult r{scores[0], 0};
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < r.value) r = {scores[i], i};
  }
  return r;
}

namespace {

std::string probe_id(const probes::ProbeContext& p, std::size_t index) {
  if (p.source_id) return *p.source_id;
  return std::string(probes::to_string(p.strategy)) + "#" + std::to_string(index);
}

AttackScore make_score(const corpus::Sample& sample, AttackKind kind, double score) {
  AttackScore s;
  s.sample_id = sample.id;
  s.attack = kind;
  s.score = score;
  s.label = sample.label;
  return s;
}

}  // namespace

AttackScore final_score(const corpus::Sample& sample, std::span<const probes::ProbeContext> probe_set,
                        provider::ScoringClient& client, AttackKind kind, LlReduction how) {
  if (probe_set.empty()) throw ConfigError("sample '" + sample.id + "' has an empty probe set");
  const double base = reduce_ll(client.score_conditional(baseline_request(sample)), how);
  std::vector<double> per_probe;
  per_probe.reserve(probe_set.size());
  for (const auto& p : probe_set) {
    if (p.text.empty()) throw ConfigError("probe text is empty");
    per_probe.push_back(base - reduce_ll(client.score_conditional(probed_request(sample, p.text)), how));
  }
  const auto best = aggregate_min(per_probe);
  auto s = make_score(sample, kind, best.value);
  s.details = {{"baseline_ll", base},
               {"best_probe_index", best.index},
               {"best_probe_id", probe_id(probe_set[best.index], best.index)},
               {"probe_scores", per_probe}};
  if (how == LlReduction::mean) s.details["ll_reduction"] = "mean";
  return s;
}

AttackScore loss_attack(const corpus::Sample& sample, provider::ScoringClient& client) {
  const auto sr = client.score_conditional(baseline_request(sample));
  auto s = make_score(sample, AttackKind::loss, provider::sum_ll(sr));
  s.details = {{"n_tokens", sr.logprobs.size()}};
  return s;
}

std::size_t zlib_size(std::string_view text) {
  uLongf len = compressBound(static_cast<uLong>(text.size()));
  std::vector<Bytef> buf(len);
  const int rc = compress2(buf.data(), &len, reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw Error("zlib compression failed");
  return static_cast<std::size_t>(len);
}

AttackScore zlib_attack(const corpus::Sample& sample, provider::ScoringClient& client) {
  const double ll = provider::sum_ll(client.score_conditional(baseline_request(sample)));
  const auto z = zlib_size(sample.output);
  auto s = make_score(sample, AttackKind::zlib, ll / static_cast<double>(z));
  s.details = {{"ll", ll}, {"zlib_bytes", z}};
  return s;
}

std::size_t mink_count(double k_percent, std::size_t length) {
  if (!(k_percent > 0 && k_percent <= 100)) throw ConfigError("k percent must lie in (0, 100]");
  const auto n = static_cast<std::size_t>(std::floor(k_percent / 100.0 * static_cast<double>(length) + 1e-9));
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(1, length));
}

double mink_score(std::span<const double> logprobs, double k_percent) {
  if (logprobs.empty()) throw ValidationError("Min-K% needs at least one token");
  std::vector<double> sorted(logprobs.begin(), logprobs.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = mink_count(k_percent, sorted.size());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += sorted[i];
  return acc / static_cast<double>(n);
}

AttackScore mink_attack(const corpus::Sample& sample, provider::ScoringClient& client, double k_percent) {
  const auto sr = client.score_conditional(baseline_request(sample));
  auto s = make_score(sample, AttackKind::mink, mink_score(sr.logprobs, k_percent));
  s.details = {{"k_percent", k_percent}, {"n_selected", mink_count(k_percent, sr.logprobs.size())}};
  return s;
}

double minkpp_score(std::span<const double> logprobs, std::span<const provider::Moment> moments, double k_percent) {
  if (logprobs.size() != moments.size()) throw ShapeError("Min-K%++ needs one moment per token");
  std::vector<double> z(logprobs.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = (logprobs[i] - moments[i].mu) / std::max(moments[i].sigma, kSigmaFloor);
  return mink_score(z, k_percent);
}

AttackScore minkpp_attack(const corpus::Sample& sample, provider::ScoringClient& client, double k_percent) {
  if (!client.full_dist()) throw CapabilityError("Min-K%++ needs a provider with full_dist");
  const auto sr = client.score_conditional(baseline_request(sample));
  if (!sr.moments) throw ProtocolError("provider omitted moments despite full_dist");
  auto s = make_score(sample, AttackKind::minkpp, minkpp_score(sr.logprobs, *sr.moments, k_percent));
  s.details = {{"k_percent", k_percent}, {"n_selected", mink_count(k_percent, sr.logprobs.size())}};
  return s;
}

std::string recall_prefix(const corpus::SampleSet& pool, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ConfigError("ReCaLL needs at least one shot");
  if (pool.size() < shots)
    throw ConfigError("ReCaLL prefix pool holds " + std::to_string(pool.size()) + " samples, needs " +
                      std::to_string(shots));
  Rng rng(derive_seed(seed, 0x7eca11));
  const auto picks = sample_indices(pool.size(), shots, rng);
  std::string prefix;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    if (i) prefix.append(probes::kProbeSeparator);
    prefix += probes::render_full(pool.samples[picks[i]]);
  }
  return prefix;
}

double recall_ratio(double ll_prefixed, double ll_original) {
  if (ll_original == 0) throw StatisticsError("ReCaLL ratio undefined for a zero baseline log-likelihood");
  return ll_prefixed / ll_original;
}

AttackScore recall_attack(const corpus::Sample& sample, std::string_view prefix, provider::ScoringClient& client) {
  const double orig = provider::sum_ll(client.score_conditional(baseline_request(sample)));
  const double cond = provider::sum_ll(client.score_conditional(probed_request(sample, prefix)));
  auto s = make_score(sample, AttackKind::recall, recall_ratio(cond, orig));
  s.details = {{"ll_original", orig}, {"ll_prefixed", cond}};
  return s;
}

AttackScore recall_attack(const corpus::Sample& sample, const corpus::SampleSet& prefix_pool, std::size_t shots,
                          std::uint64_t seed, provider::ScoringClient& client) {
  return recall_attack(sample, recall_prefix(prefix_pool, shots, seed), client);
}

ProxyResult validate_proxy(std::span<const corpus::Sample> cohort,
                           std::span<const std::vector<probes::ProbeContext>> probes_per_sample,
                           const mock::NGramModel& model, ProxyOptions options) {
  if (cohort.size() < 3) throw StatisticsError("proxy validation needs at least 3 samples");
  if (probes_per_sample.size() != cohort.size()) throw ShapeError("one probe set per cohort sample is required");

  provider::ClientOptions copts;
  copts.request_full_dist = false;
  provider::ScoringClient client(std::make_shared<mock::MockProvider>(model), copts);

  ProxyResult result;
  result.points.reserve(cohort.size());
  std::vector<double> truth, icp;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort[i];
    const auto req = baseline_request(s);
    const double before = provider::sum_ll(model.score(req, false));
    const double after = provider::sum_ll(model.train_step(s, options.eta).score(req, false));
    ProxyPoint p;
    p.sample_id = s.id;
    p.label = s.label;
    p.true_gain = after - before;
    p.icp_gain = options.self_test ? p.true_gain : -final_score(s, probes_per_sample[i], client).score;
    truth.push_back(p.true_gain);
    icp.push_back(p.icp_gain);
    result.points.push_back(std::move(p));
  }
  result.rho = metrics::spearman(truth, icp);
  return result;
}

}  // namespace icp::attacks
