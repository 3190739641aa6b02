// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Pinned values come from a frozen-seed run of this binary and guard against
// silent behaviour changes; the threshold checks are the actual criteria.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "icp_audit/attacks.hpp"
#include "icp_audit/io.hpp"
#include "icp_audit/metrics.hpp"
#include "icp_audit/mock_provider.hpp"
#include "icp_audit/probes.hpp"
#include "icp_audit/rng.hpp"
#include "icp_audit/synthetic.hpp"
#include "../support.hpp"

extern char** environ;

using namespace icp;
namespace fs = std::filesystem;

namespace {

// Frozen-seed oracle values (default synthetic setup, seed 7).
constexpr double kPinnedSpAuc = 0.984150000;
constexpr double kPinnedMeanMember = -2.160382308;
constexpr double kPinnedMeanNonmember = -7.848771880;
constexpr double kPinnedGainMember = 14.450057044;
constexpr double kPinnedGainNonmember = 48.468160408;
constexpr double kPinnedRho = 0.928738427;
constexpr double kPinTolerance = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

bool pinned(double value, double pin, std::string& detail, const char* name) {
  if (std::abs(value - pin) <= kPinTolerance) return true;
  detail += std::string(" [") + name + " " + fmt(value) + " != pinned " + fmt(pin) + "]";
  return false;
}

const synthetic::Setup& setup() {
  static const auto s = synthetic::make_setup();
  return s;
}

// ---------------------------------------------------------------- 1

double brute_auc(const metrics::LabeledScores& ls) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    if (!ls.labels[i]) continue;
    for (std::size_t j = 0; j < ls.scores.size(); ++j) {
      if (ls.labels[j]) continue;
      pairs += 1;
      wins += ls.scores[i] > ls.scores[j] ? 1.0 : ls.scores[i] == ls.scores[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

double brute_tpr(const metrics::LabeledScores& ls, double target) {
  std::vector<double> thresholds = ls.scores;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  const double np = static_cast<double>(ls.n_pos()), nn = static_cast<double>(ls.n_neg());
  double best = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < ls.scores.size(); ++i) {
      if (ls.scores[i] >= t) (ls.labels[i] ? tp : fp) += 1;
    }
    if (fp / nn <= target) best = std::max(best, tp / np);
  }
  return best;
}

Outcome metric_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240601);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    metrics::LabeledScores ls;
    const std::size_t n = 2 + uniform_index(rng, 199);
    for (std::size_t i = 0; i < n; ++i) {
      double s = uniform_unit(rng) * 4 - 2;
      // inject duplicates
      if (i > 0 && uniform_unit(rng) < 0.3) s = ls.scores[uniform_index(rng, i)];
      ls.add(s, i == 0 || (i != 1 && uniform_unit(rng) < 0.5));
    }
    if (std::abs(metrics::auc(ls) - brute_auc(ls)) > 1e-12) ++mismatches;
    for (double f : {0.0, 0.01, 0.05, 0.1, 0.3, 1.0}) {
      if (std::abs(metrics::tpr_at_fpr(ls, f) - brute_tpr(ls, f)) > 1e-12) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10,
          std::to_string(mismatches) + " mismatches over 1000 instances, " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome ngram_oracle() {
  std::vector<std::string> texts{"a a b"};
  auto m = mock::NGramModel::fit_streams(texts, {2, 1.0, 1.0, 1.0});
  auto m3 = mock::NGramModel::fit_streams(texts, {3, 1.0, 1.0, 1.0});
  auto mh = mock::NGramModel::fit_streams(texts, {2, 0.5, 1.0, 1.0});
  auto ctx = m.context_counts("a b");
  auto m2 = m.with_lambda(2.0);
  auto ctx2 = m2.context_counts("a b");
  auto lp = [](const mock::NGramModel& model, std::vector<std::string> h, const char* t,
               const mock::ContextCounts* c = nullptr) {
    return model.cond_logprob(std::span<const std::string>(h), t, c);
  };
  struct Case {
    double got, want;
  };
  const std::vector<Case> cases{
      {lp(m, {"a"}, "b"), 1.0 / 3},        {lp(m, {"a"}, "a"), 1.0 / 3},
      {lp(m, {"a"}, "[MASK]"), 1.0 / 6},   {lp(m, {"a"}, "zzz"), 1.0 / 6},
      {lp(m, {"<s>"}, "a"), 2.0 / 5},      {lp(m, {"<s>"}, "b"), 1.0 / 5},
      {lp(m, {"b"}, "a"), 1.0 / 4},        {lp(mh, {"a"}, "b"), 1.5 / 4},
      {lp(m3, {"a", "a"}, "b"), 2.0 / 5},  {lp(m3, {"a", "b"}, "b"), 1.0 / 4},
      {lp(m, {"a"}, "b", &ctx), 3.0 / 7},  {lp(m, {"a"}, "a", &ctx), 2.0 / 7},
      {lp(m2, {"a"}, "b", &ctx2), 4.0 / 8}};
  std::size_t bad = 0;
  for (const auto& c : cases) bad += std::abs(c.got - std::log(c.want)) > 1e-12;

  const auto& model = setup().model;
  const auto pctx = model.context_counts(probes::render_full(setup().nonmembers.samples[0]));
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    mock::History h{static_cast<mock::TokenId>(uniform_index(rng, model.vocab().size()))};
    for (const auto* c : {static_cast<const mock::ContextCounts*>(nullptr), &pctx}) {
      double total = 0;
      for (mock::TokenId t = 0; t < model.vocab().size(); ++t) {
        if (t != model.pad_id()) total += std::exp(model.cond_logprob(h, t, c));
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return {bad == 0 && worst <= 1e-9, std::to_string(cases.size() - bad) + "/" + std::to_string(cases.size()) +
                                         " hand cases, max |sum p - 1| = " + std::to_string(worst)};
}

// ---------------------------------------------------------------- 3, 4, 9

struct CohortRun {
  std::map<attacks::AttackKind, metrics::LabeledScores> scores;
  double mean_member = 0, mean_nonmember = 0;
  double seconds = 0;
};

const CohortRun& cohort_run() {
  static const CohortRun run = [] {
    CohortRun r;
    const auto t0 = std::chrono::steady_clock::now();
    provider::ScoringClient client(std::make_shared<mock::MockProvider>(setup().model));
    const auto prefix = attacks::recall_prefix(setup().pool, attacks::kDefaultShots, 7);
    const auto cohort = setup().cohort(400);
    for (const auto& s : cohort) {
      const bool member = s.label == corpus::Label::member;
      const auto fs = attacks::final_score(s, probes::random_mask_probes(s, 0.7, 5, 7), client);
      r.scores[attacks::AttackKind::icp_sp].add(fs.score, member);
      (member ? r.mean_member : r.mean_nonmember) += fs.score / 400.0;
      r.scores[attacks::AttackKind::loss].add(attacks::loss_attack(s, client).score, member);
      r.scores[attacks::AttackKind::zlib].add(attacks::zlib_attack(s, client).score, member);
      r.scores[attacks::AttackKind::mink].add(attacks::mink_attack(s, client, 20).score, member);
      r.scores[attacks::AttackKind::minkpp].add(attacks::minkpp_attack(s, client, 20).score, member);
      r.scores[attacks::AttackKind::recall].add(attacks::recall_attack(s, prefix, client).score, member);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome separation() {
  const auto& r = cohort_run();
  const double auc = metrics::auc(r.scores.at(attacks::AttackKind::icp_sp));
  Outcome o;
  o.detail = "AUC " + fmt(auc) + ", mean final score members " + fmt(r.mean_member) + " vs nonmembers " +
             fmt(r.mean_nonmember) + ", " + fmt(r.seconds) + " s";
  o.pass = r.mean_member > r.mean_nonmember && auc >= 0.75 && r.seconds < 60;
  o.pass &= pinned(auc, kPinnedSpAuc, o.detail, "auc");
  o.pass &= pinned(r.mean_member, kPinnedMeanMember, o.detail, "member mean");
  o.pass &= pinned(r.mean_nonmember, kPinnedMeanNonmember, o.detail, "nonmember mean");
  return o;
}

Outcome optimization_gap() {
  const auto& model = setup().model;
  double gm = 0, gn = 0;
  for (const auto& s : setup().cohort(400)) {
    const auto req = attacks::baseline_request(s);
    const double gain =
        provider::sum_ll(model.train_step(s).score(req, false)) - provider::sum_ll(model.score(req, false));
    (s.label == corpus::Label::member ? gm : gn) += gain / 400.0;
  }
  Outcome o{gn > gm, "mean train-step gain nonmembers " + fmt(gn) + " vs members " + fmt(gm)};
  o.pass &= pinned(gm, kPinnedGainMember, o.detail, "member gain");
  o.pass &= pinned(gn, kPinnedGainNonmember, o.detail, "nonmember gain");
  return o;
}

Outcome baseline_direction() {
  const auto& r = cohort_run();
  Outcome o;
  for (auto k : {attacks::AttackKind::loss, attacks::AttackKind::zlib, attacks::AttackKind::mink,
                 attacks::AttackKind::minkpp, attacks::AttackKind::recall}) {
    const double auc = metrics::auc(r.scores.at(k));
    o.pass &= auc > 0.5;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + std::string(attacks::to_string(k)) + " " + fmt(auc);
  }
  return o;
}

// ---------------------------------------------------------------- 5

Outcome proxy_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cohort = setup().cohort(80);
  std::vector<std::vector<probes::ProbeContext>> sets;
  for (const auto& s : cohort) sets.push_back(probes::random_mask_probes(s, 0.7, 5, 7));
  const auto r = attacks::validate_proxy(cohort, sets, setup().model);
  std::vector<double> truth, icp;
  for (const auto& p : r.points) {
    truth.push_back(p.true_gain);
    icp.push_back(p.icp_gain);
  }
  const double pv = metrics::spearman_permutation_pvalue(truth, icp, 10000, 7);
  const double secs = seconds_since(t0);
  Outcome o{r.rho > 0.4 && pv < 0.01 && cohort.size() == 160 && secs < 120,
            "n " + std::to_string(cohort.size()) + ", rho " + fmt(r.rho) + ", p " + fmt(pv) + ", " + fmt(secs) + " s"};
  o.pass &= pinned(r.rho, kPinnedRho, o.detail, "rho");
  return o;
}

// ---------------------------------------------------------------- 6

Outcome masking_exactness() {
  std::size_t cases = 0, bad = 0;
  for (std::size_t L = 1; L <= 64; ++L) {
    std::string out;
    for (std::size_t i = 0; i < L; ++i) out += (i ? " w" : "w") + std::to_string(i);
    const auto s = test::sample("m" + std::to_string(L), "Rewrite", "", out);
    const auto prompt = probes::render(s).prompt;
    for (int tenths = 0; tenths <= 10; ++tenths) {
      const std::size_t want = static_cast<std::size_t>(tenths) * L / 10;
      for (std::uint64_t seed = 0; seed < 15; ++seed) {
        ++cases;
        const auto p = probes::random_mask_probe(s, tenths / 10.0, seed);
        const auto words = probes::response_words(p.text.substr(prompt.size()));
        std::size_t masks = 0;
        bool kept = words.size() == L;
        for (std::size_t i = 0; kept && i < L; ++i) {
          if (words[i] == "[MASK]") ++masks;
          else kept = words[i] == "w" + std::to_string(i);
        }
        bad += !(kept && masks == want);
      }
    }
  }
  Rng rng(6);
  std::size_t ll_cases = 0;
  for (; ll_cases < 10000; ++ll_cases) {
    const std::size_t L = 1 + uniform_index(rng, 64);
    std::vector<double> lls(L);
    for (auto& v : lls) v = -static_cast<double>(uniform_index(rng, 6)) / 2.0;  // many ties
    const int tenths = static_cast<int>(uniform_index(rng, 11));
    const std::size_t n = static_cast<std::size_t>(tenths) * L / 10;
    for (auto mode : {probes::LlMode::min, probes::LlMode::max}) {
      std::vector<std::size_t> order(L);
      for (std::size_t i = 0; i < L; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = mode == probes::LlMode::min ? lls[a] : -lls[a];
        const double vb = mode == probes::LlMode::min ? lls[b] : -lls[b];
        return va != vb ? va < vb : a < b;
      });
      std::vector<std::size_t> want(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(want.begin(), want.end());
      bad += probes::ll_mask_positions(lls, tenths / 10.0, mode) != want;
    }
  }
  return {bad == 0, std::to_string(cases) + " random-mask and " + std::to_string(ll_cases) +
                        " LL-mask cases, " + std::to_string(bad) + " failures"};
}

// ---------------------------------------------------------------- 7

Outcome aggregation_monotonicity() {
  Rng rng(7);
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 9);
    std::map<std::string, std::vector<double>> probed;
    std::vector<probes::ProbeContext> set;
    for (std::size_t j = 0; j <= n; ++j) {
      const auto text = "c" + std::to_string(j);
      probed[text] = {-10.0 + (uniform_unit(rng) * 8 - 4)};
      set.push_back({text, probes::Strategy::random_mask});
    }
    auto fake = std::make_shared<test::FakeProvider>([&probed](const provider::ScoreRequest& r, bool) {
      return test::scored(r.context ? probed.at(*r.context) : std::vector<double>{-10.0});
    });
    provider::ScoringClient client(fake);
    const auto s = test::sample("x" + std::to_string(trial), "I", "", "y");
    const double without = attacks::final_score(s, std::span(set).first(n), client).score;
    const double with = attacks::final_score(s, set, client).score;
    bad += !(with <= without);
  }
  return {bad == 0, "1000 probe sets, " + std::to_string(bad) + " violations"};
}

// ---------------------------------------------------------------- 8

int spawn_wait(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return -1;
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// serve-mock in the background; returns its pid and endpoint.
std::pair<pid_t, std::string> spawn_server(const std::vector<std::string>& args) {
  int fds[2];
  if (pipe(fds) != 0) return {-1, ""};
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) {
    close(fds[0]);
    return {-1, ""};
  }
  std::string out;
  char ch = 0;
  while (read(fds[0], &ch, 1) == 1) {
    out += ch;
    const auto pos = out.find("LISTENING ");
    if (pos != std::string::npos && out.back() == '\n') {
      close(fds[0]);
      return {pid, out.substr(pos + 10, out.size() - pos - 11)};
    }
  }
  close(fds[0]);
  return {pid, ""};
}

Outcome determinism() {
  const std::string bin = ICP_AUDIT_BIN;
  const auto root = fs::temp_directory_path() / "icp_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> outputs;
  std::string detail;
  for (int parallel : {1, 8}) {
    const auto dir = root / ("run" + std::to_string(parallel));
    const auto data = (dir / "data").string();
    const auto out = (dir / "out").string();
    const std::string seed = "11";
    if (spawn_wait({bin, "prepare-data", "--synth-n", "500", "--synth-vocab", "400", "--cohort-size", "40", "--seed",
                    seed, "--out", data}) != 0)
      return {false, "prepare-data failed"};
    auto [pid, endpoint] =
        spawn_server({bin, "serve-mock", "--corpus", data + "/train.jsonl", "--port", "0", "--seed", seed});
    if (pid < 0 || endpoint.empty()) return {false, "serve-mock did not start"};
    const auto mif = std::to_string(parallel);
    int rc = spawn_wait({bin, "build-probes", "--cohort", data + "/cohort.jsonl", "--strategy", "random_mask", "--k",
                         "5", "--seed", seed, "--out", out});
    if (rc == 0)
      rc = spawn_wait({bin, "run-attack", "--cohort", data + "/cohort.jsonl", "--probes", out + "/probes.jsonl",
                       "--endpoint", endpoint, "--prefix-pool", data + "/val.jsonl", "--reference-pool",
                       data + "/val.jsonl", "--seed", seed, "--max-in-flight", mif, "--out", out});
    if (rc == 0) rc = spawn_wait({bin, "eval", "--out", out, "--seed", seed});
    kill(pid, SIGTERM);
    waitpid(pid, nullptr, 0);
    if (rc != 0) return {false, "pipeline step failed with max_in_flight " + mif};
    std::string blob;
    for (const char* f : {"probes.jsonl", "scores.jsonl", "report.json", "report.csv", "run_meta.json"}) {
      blob += io::read_file(fs::path(out) / f);
    }
    outputs.push_back(blob);
    detail = std::to_string(blob.size()) + " bytes compared";
  }
  fs::remove_all(root);
  return {outputs[0] == outputs[1], "max_in_flight 1 vs 8, " + detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracle},
      {"n-gram oracle", ngram_oracle},
      {"member/nonmember separation", separation},
      {"optimization-gap analog", optimization_gap},
      {"proxy fidelity", proxy_fidelity},
      {"masking exactness", masking_exactness},
      {"aggregation monotonicity", aggregation_monotonicity},
      {"pipeline determinism", determinism},
      {"baseline direction sanity", baseline_direction},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ("
              << o.detail << ")" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
