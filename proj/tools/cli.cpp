#include "icp_audit/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <pthread.h>

#include "icp_audit/attacks.hpp"
#include "icp_audit/corpus.hpp"
#include "icp_audit/digest.hpp"
#include "icp_audit/errors.hpp"
#include "icp_audit/http_provider.hpp"
#include "icp_audit/io.hpp"
#include "icp_audit/metrics.hpp"
#include "icp_audit/mock_provider.hpp"
#include "icp_audit/probes.hpp"
#include "icp_audit/synthetic.hpp"

namespace icp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string endpoint;
  std::size_t max_in_flight = 4;
  bool strict = false;
  json cfg = json::object();
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file; explicit flags override its values");
  sub->add_option("--seed", c.seed, "Seed for every randomized step");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--endpoint", c.endpoint, "Provider base URL, e.g. http://127.0.0.1:8080");
  sub->add_option("--max-in-flight", c.max_in_flight, "Maximum concurrent provider requests")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--strict", c.strict, "Fail instead of skipping attacks the provider cannot run");
}

// Fills `target` from the config file unless the flag was given explicitly.
class ConfigMerge {
 public:
  ConfigMerge(CLI::App* sub, const json& cfg) : sub_(sub), cfg_(cfg) {}

  template <typename T>
  void operator()(const std::string& flag, T& target) {
    if (sub_->get_option(flag)->count() > 0) return;
    std::string key = flag.substr(2);
    for (auto& ch : key) {
      if (ch == '-') ch = '_';
    }
    auto it = cfg_.find(key);
    if (it == cfg_.end() || it->is_null()) return;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        if (it->is_array()) {
          std::string joined;
          for (const auto& v : *it) {
            if (!joined.empty()) joined += ',';
            joined += v.is_string() ? v.get<std::string>() : v.dump();
          }
          target = joined;
          return;
        }
        target = it->is_string() ? it->get<std::string>() : it->dump();
      } else {
        target = it->get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

 private:
  CLI::App* sub_;
  const json& cfg_;
};

void load_common(CLI::App* sub, Common& c) {
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw ConfigError("config file '" + c.config + "' does not exist");
    auto parsed = json::parse(io::read_file(c.config), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) throw ConfigError("config file must hold a JSON object");
    c.cfg = std::move(parsed);
  }
  ConfigMerge merge(sub, c.cfg);
  merge("--seed", c.seed);
  merge("--out", c.out);
  merge("--endpoint", c.endpoint);
  merge("--max-in-flight", c.max_in_flight);
  merge("--strict", c.strict);
  if (c.max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("cannot parse ") + what + " value '" + s + "'");
    }
  }
  return out;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

std::string file_digest(const std::string& path) { return path.empty() ? "" : sha256_hex(io::read_file(path)); }

std::string jsonl_text(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

std::string samples_text(const std::vector<corpus::Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += corpus::to_jsonl_line(s) + "\n";
  return out;
}

std::vector<corpus::Sample> load_cohort(const std::string& path) {
  require_file(path, "cohort file");
  auto set = corpus::load_jsonl(path);
  return set.samples;
}

std::string cache_path_for(const std::string& flag_value, const std::string& out_dir) {
  if (const char* env = std::getenv("ICP_AUDIT_CACHE"); env && *env) return env;
  if (!flag_value.empty()) return flag_value;
  return (fs::path(out_dir) / "score_cache.jsonl").string();
}

std::shared_ptr<provider::HttpProvider> http_provider(const Common& c) {
  if (c.endpoint.empty()) throw ConfigError("--endpoint is required");
  return std::make_shared<provider::HttpProvider>(c.endpoint);
}

void warn(const std::string& message) { std::cerr << "warning: " << message << "\n"; }

// ---------------------------------------------------------------- prepare-data

struct PrepareArgs {
  std::string input;
  std::size_t synth_n = 0;
  std::size_t synth_vocab = 2000;
  std::size_t synth_len_min = 16;
  std::size_t synth_len_max = 48;
  std::string ratios = "0.8,0.1,0.1";
  std::size_t cohort_size = 500;
};

int cmd_prepare_data(CLI::App* sub, Common& c, PrepareArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--input", a.input);
  merge("--synth-n", a.synth_n);
  merge("--synth-vocab", a.synth_vocab);
  merge("--synth-len-min", a.synth_len_min);
  merge("--synth-len-max", a.synth_len_max);
  merge("--ratios", a.ratios);
  merge("--cohort-size", a.cohort_size);

  corpus::SampleSet set;
  if (!a.input.empty()) {
    require_file(a.input, "input dataset");
    set = corpus::load_jsonl(a.input);
  } else if (a.synth_n > 0) {
    set = corpus::synth_corpus(c.seed, a.synth_n, a.synth_vocab, {a.synth_len_min, a.synth_len_max});
  } else {
    throw ConfigError("prepare-data needs --input or --synth-n");
  }

  const auto r = parse_doubles(a.ratios, "ratio");
  if (r.size() != 3) throw ConfigError("--ratios takes exactly three values");
  const auto parts = corpus::split(set, {r[0], r[1], r[2]}, c.seed);
  const auto cohort = corpus::build_cohort(parts.train, parts.test, a.cohort_size, c.seed);

  const fs::path out(c.out);
  fs::create_directories(out);
  io::write_file_atomic(out / "train.jsonl", samples_text(parts.train.samples));
  io::write_file_atomic(out / "val.jsonl", samples_text(parts.val.samples));
  io::write_file_atomic(out / "test.jsonl", samples_text(parts.test.samples));
  io::write_file_atomic(out / "cohort.jsonl", samples_text(cohort.all()));

  json ids_m = json::array(), ids_n = json::array();
  for (const auto& s : cohort.members) ids_m.push_back(s.id);
  for (const auto& s : cohort.nonmembers) ids_n.push_back(s.id);
  json manifest{{"seed", c.seed},
                {"source", set.source},
                {"ratios", r},
                {"sizes", {{"train", parts.train.size()}, {"val", parts.val.size()}, {"test", parts.test.size()}}},
                {"cohort", {{"n_each", a.cohort_size}, {"members", ids_m}, {"nonmembers", ids_n}}}};
  io::write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "train " << parts.train.size() << " val " << parts.val.size() << " test " << parts.test.size()
            << " cohort " << cohort.members.size() << "+" << cohort.nonmembers.size() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ serve-mock

struct ServeArgs {
  std::string corpus;
  std::string model;
  int order = 2;
  double alpha = 0.1;
  double lambda = 1.0;
  double eta = 1.0;
  std::size_t words_changed = 20;
  std::string host = "127.0.0.1";
  int port = 0;
  std::string save_model;
};

int cmd_serve_mock(CLI::App* sub, Common& c, ServeArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--corpus", a.corpus);
  merge("--model", a.model);
  merge("--order", a.order);
  merge("--alpha", a.alpha);
  merge("--lambda", a.lambda);
  merge("--eta", a.eta);
  merge("--words-changed", a.words_changed);
  merge("--host", a.host);
  merge("--port", a.port);
  merge("--save-model", a.save_model);

  std::optional<corpus::SampleSet> corpus_set;
  std::optional<mock::NGramModel> model;
  if (!a.model.empty()) {
    require_file(a.model, "model file");
    model = mock::NGramModel::from_json(json::parse(io::read_file(a.model)));
  } else {
    require_file(a.corpus, "fit corpus");
    corpus_set = corpus::load_jsonl(a.corpus);
    model = mock::NGramModel::fit(*corpus_set, {a.order, a.alpha, a.lambda, a.eta});
  }
  if (!a.save_model.empty()) io::write_file_atomic(a.save_model, model->to_json().dump() + "\n");

  auto provider = std::make_shared<mock::MockProvider>(std::move(*model), corpus_set ? &*corpus_set : nullptr,
                                                       mock::GeneratorOptions{a.words_changed});

  // Block termination signals before any server thread exists; a dedicated
  // thread waits for them and stops the server.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  mock::MockServer server(provider);
  const int port = server.bind(a.host, a.port);
  std::cout << "MODEL_DIGEST " << provider->model().digest() << "\n";
  std::cout << "MODEL_ID " << provider->model().model_id() << "\n";
  std::cout << "LISTENING http://" << a.host << ":" << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  waiter.join();
  return kExitOk;
}

// ---------------------------------------------------------------- probe building

struct ProbeArgs {
  std::string cohort;
  std::string strategy = "random_mask";
  int k = -1;  // strategy default
  double mask_rate = 0.7;
  std::string pool;
  double temperature = 1.0;
  std::string embedder = "auto";
  std::string probes_out;
};

constexpr std::size_t kDefaultSpK = 5;
constexpr std::size_t kDefaultRefK = 10;

std::size_t resolve_k(int k, probes::Strategy s) {
  if (k >= 0) return static_cast<std::size_t>(k);
  return s == probes::Strategy::reference ? kDefaultRefK : kDefaultSpK;
}

std::unique_ptr<provider::Embedder> make_embedder(const std::string& mode, provider::ScoringClient* client,
                                                  const corpus::SampleSet& pool) {
  const bool provider_ok = client && client->capabilities().embed;
  if (mode == "provider" || (mode == "auto" && provider_ok)) {
    if (!provider_ok) throw CapabilityError("provider does not advertise embed");
    return std::make_unique<provider::ProviderEmbedder>(*client);
  }
  if (mode != "auto" && mode != "fallback") throw ConfigError("--embedder must be auto, provider or fallback");
  std::vector<std::string> docs;
  for (const auto& s : pool.samples) docs.push_back(probes::render_full(s));
  return std::make_unique<provider::TfidfEmbedder>(docs);
}

// Builds one probe set per cohort sample. Baselines needed by LL-based masking
// are scored through `client` (already warmed by the caller when possible).
std::vector<std::vector<probes::ProbeContext>> build_probe_sets(
    const std::vector<corpus::Sample>& cohort, probes::Strategy strategy, std::size_t k, double mask_rate,
    const corpus::SampleSet* pool, const std::string& embedder_mode, double temperature, std::uint64_t seed,
    provider::ScoringClient* client, std::size_t max_in_flight) {
  std::vector<std::vector<probes::ProbeContext>> sets(cohort.size());
  switch (strategy) {
    case probes::Strategy::random_mask:
      for (std::size_t i = 0; i < cohort.size(); ++i)
        sets[i] = probes::random_mask_probes(cohort[i], mask_rate, k, seed);
      break;
    case probes::Strategy::min_k_mask:
    case probes::Strategy::max_k_mask: {
      if (!client) throw ConfigError("LL-based masking needs --endpoint");
      std::vector<provider::ScoreRequest> reqs;
      for (const auto& s : cohort) reqs.push_back(attacks::baseline_request(s));
      const auto scored = client->batch_score(reqs, max_in_flight);
      const auto mode = strategy == probes::Strategy::min_k_mask ? probes::LlMode::min : probes::LlMode::max;
      for (std::size_t i = 0; i < cohort.size(); ++i)
        sets[i] = {probes::ll_mask_probe(cohort[i], scored[i].logprobs, mask_rate, mode)};
      break;
    }
    case probes::Strategy::reference: {
      if (!pool) throw ConfigError("reference probing needs a reference pool");
      auto embedder = make_embedder(embedder_mode, client, *pool);
      probes::ReferenceIndex index(*pool, *embedder);
      bool warned = false;
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        std::string warning;
        sets[i] = index.probes_for(cohort[i], k, &warning);
        if (!warning.empty() && !warned) {
          warn(warning);
          warned = true;
        }
      }
      break;
    }
    case probes::Strategy::generated:
      if (!client) throw ConfigError("generation-based probing needs --endpoint");
      for (std::size_t i = 0; i < cohort.size(); ++i)
        sets[i] = probes::generated_probes(cohort[i], k, *client, temperature, seed);
      break;
  }
  return sets;
}

probes::Strategy parse_strategy_or_throw(const std::string& s) {
  auto strategy = probes::parse_strategy(s);
  if (!strategy) throw ConfigError("unknown probe strategy '" + s + "'");
  return *strategy;
}

int cmd_build_probes(CLI::App* sub, Common& c, ProbeArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--cohort", a.cohort);
  merge("--strategy", a.strategy);
  merge("--k", a.k);
  merge("--mask-rate", a.mask_rate);
  merge("--pool", a.pool);
  merge("--temperature", a.temperature);
  merge("--embedder", a.embedder);
  merge("--probes-out", a.probes_out);

  const auto strategy = parse_strategy_or_throw(a.strategy);
  if (!(a.mask_rate >= 0 && a.mask_rate <= 1)) throw ConfigError("mask rate must lie in [0, 1]");
  const auto cohort = load_cohort(a.cohort);
  std::optional<corpus::SampleSet> pool;
  if (strategy == probes::Strategy::reference) {
    require_file(a.pool, "reference pool");
    pool = corpus::load_jsonl(a.pool);
  }
  std::unique_ptr<provider::ScoringClient> client;
  if (!c.endpoint.empty()) client = std::make_unique<provider::ScoringClient>(http_provider(c));

  const auto k = resolve_k(a.k, strategy);
  const auto sets = build_probe_sets(cohort, strategy, k, a.mask_rate, pool ? &*pool : nullptr, a.embedder,
                                     a.temperature, c.seed, client.get(), c.max_in_flight);
  std::vector<json> records;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    for (const auto& p : sets[i]) records.push_back(probes::to_json(cohort[i].id, p));
  }
  const fs::path path = a.probes_out.empty() ? fs::path(c.out) / "probes.jsonl" : fs::path(a.probes_out);
  io::write_file_atomic(path, jsonl_text(records));
  std::cout << "wrote " << records.size() << " probes to " << path.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ run-attack

struct AttackArgs {
  std::string cohort;
  std::string attacks;
  std::string probes;
  std::string probe_strategy = "random_mask";
  int k = -1;
  double mask_rate = 0.7;
  int ref_k = -1;
  std::string reference_pool;
  std::string prefix_pool;
  std::size_t shots = attacks::kDefaultShots;
  double mink_k = attacks::kDefaultKPercent;
  double temperature = 1.0;
  std::string embedder = "auto";
  std::string cache;
  std::string ll_reduction = "sum";
  std::string scores_out;
};

std::map<std::string, std::vector<probes::ProbeContext>> load_probe_file(const std::string& path) {
  require_file(path, "probe file");
  std::map<std::string, std::vector<probes::ProbeContext>> out;
  std::istringstream in(io::read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(lineno, "probe file line is not JSON");
    auto [id, probe] = probes::probe_from_json(j);
    out[id].push_back(std::move(probe));
  }
  return out;
}

// Which attacks the provider cannot serve, with the reason.
std::optional<std::string> missing_capability(attacks::AttackKind kind, const provider::ScoringClient& client,
                                              probes::Strategy sp_strategy, bool have_probe_file) {
  if (kind == attacks::AttackKind::minkpp && !client.full_dist()) return "provider lacks full_dist";
  if (kind == attacks::AttackKind::icp_sp && !have_probe_file && sp_strategy == probes::Strategy::generated &&
      !client.capabilities().generate)
    return "provider lacks generate";
  return std::nullopt;
}

int cmd_run_attack(CLI::App* sub, Common& c, AttackArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--cohort", a.cohort);
  merge("--attacks", a.attacks);
  merge("--probes", a.probes);
  merge("--probe-strategy", a.probe_strategy);
  merge("--k", a.k);
  merge("--mask-rate", a.mask_rate);
  merge("--ref-k", a.ref_k);
  merge("--reference-pool", a.reference_pool);
  merge("--prefix-pool", a.prefix_pool);
  merge("--shots", a.shots);
  merge("--mink-k", a.mink_k);
  merge("--temperature", a.temperature);
  merge("--embedder", a.embedder);
  merge("--cache", a.cache);
  merge("--ll-reduction", a.ll_reduction);
  merge("--scores-out", a.scores_out);

  using attacks::AttackKind;
  const auto cohort = load_cohort(a.cohort);
  const auto sp_strategy = parse_strategy_or_throw(a.probe_strategy);
  if (sp_strategy == probes::Strategy::reference) throw ConfigError("use icp_ref for reference probing");
  if (!(a.mask_rate >= 0 && a.mask_rate <= 1)) throw ConfigError("mask rate must lie in [0, 1]");
  if (a.ll_reduction != "sum" && a.ll_reduction != "mean") throw ConfigError("--ll-reduction must be sum or mean");
  const auto reduction = a.ll_reduction == "sum" ? attacks::LlReduction::sum : attacks::LlReduction::mean;

  std::vector<AttackKind> selected;
  if (a.attacks.empty()) {
    selected = {AttackKind::icp_sp, AttackKind::loss, AttackKind::zlib, AttackKind::mink, AttackKind::minkpp};
    if (!a.reference_pool.empty()) selected.insert(selected.begin() + 1, AttackKind::icp_ref);
    if (!a.prefix_pool.empty()) selected.push_back(AttackKind::recall);
  } else {
    for (const auto& name : split_list(a.attacks)) {
      auto kind = attacks::parse_attack(name);
      if (!kind) throw ConfigError("unknown attack '" + name + "'");
      if (std::find(selected.begin(), selected.end(), *kind) == selected.end()) selected.push_back(*kind);
    }
  }
  auto wants = [&](AttackKind k) { return std::find(selected.begin(), selected.end(), k) != selected.end(); };
  if (wants(AttackKind::icp_sp) && a.k == 0) throw ConfigError("ICP attacks need K >= 1");
  if (wants(AttackKind::icp_ref) && a.ref_k == 0) throw ConfigError("ICP attacks need K >= 1");

  std::optional<corpus::SampleSet> ref_pool, prefix_pool;
  if (wants(AttackKind::icp_ref)) {
    require_file(a.reference_pool, "reference pool");
    ref_pool = corpus::load_jsonl(a.reference_pool);
  }
  std::string recall_prefix;
  if (wants(AttackKind::recall)) {
    require_file(a.prefix_pool, "prefix pool");
    prefix_pool = corpus::load_jsonl(a.prefix_pool);
    recall_prefix = attacks::recall_prefix(*prefix_pool, a.shots, c.seed);
  }
  std::optional<std::map<std::string, std::vector<probes::ProbeContext>>> probe_file;
  if (!a.probes.empty()) probe_file = load_probe_file(a.probes);

  provider::ClientOptions copts;
  copts.cache_path = cache_path_for(a.cache, c.out);
  provider::ScoringClient client(http_provider(c), copts);

  std::vector<std::string> skipped;
  std::vector<AttackKind> active;
  for (auto k : selected) {
    if (auto why = missing_capability(k, client, sp_strategy, probe_file.has_value())) {
      if (c.strict) throw CapabilityError(std::string(attacks::to_string(k)) + ": " + *why);
      warn("skipping " + std::string(attacks::to_string(k)) + ": " + *why);
      skipped.push_back(std::string(attacks::to_string(k)));
    } else {
      active.push_back(k);
    }
  }
  auto active_has = [&](AttackKind k) { return std::find(active.begin(), active.end(), k) != active.end(); };

  // Stage 1: baselines (shared by every attack).
  std::vector<provider::ScoreRequest> reqs;
  for (const auto& s : cohort) reqs.push_back(attacks::baseline_request(s));
  client.batch_score(reqs, c.max_in_flight);

  // Stage 2: probe sets.
  std::vector<std::vector<probes::ProbeContext>> sp_sets, ref_sets;
  if (active_has(AttackKind::icp_sp)) {
    if (probe_file) {
      sp_sets.resize(cohort.size());
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        auto it = probe_file->find(cohort[i].id);
        if (it == probe_file->end()) throw ConfigError("probe file has no probes for sample '" + cohort[i].id + "'");
        sp_sets[i] = it->second;
      }
    } else {
      sp_sets = build_probe_sets(cohort, sp_strategy, resolve_k(a.k, sp_strategy), a.mask_rate, nullptr, a.embedder,
                                 a.temperature, c.seed, &client, c.max_in_flight);
    }
  }
  if (active_has(AttackKind::icp_ref)) {
    ref_sets = build_probe_sets(cohort, probes::Strategy::reference, resolve_k(a.ref_k, probes::Strategy::reference),
                                a.mask_rate, &*ref_pool, a.embedder, a.temperature, c.seed, &client,
                                c.max_in_flight);
  }

  // Stage 3: every probed request, fanned out.
  reqs.clear();
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    for (const auto* sets : {&sp_sets, &ref_sets}) {
      if (sets->empty()) continue;
      for (const auto& p : (*sets)[i]) reqs.push_back(attacks::probed_request(cohort[i], p.text));
    }
    if (active_has(AttackKind::recall)) reqs.push_back(attacks::probed_request(cohort[i], recall_prefix));
  }
  client.batch_score(reqs, c.max_in_flight);

  // Stage 4: scores, all served from the cache.
  std::vector<json> records;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort[i];
    for (auto k : active) {
      attacks::AttackScore score;
      switch (k) {
        case AttackKind::icp_sp:
          score = attacks::final_score(s, sp_sets[i], client, AttackKind::icp_sp, reduction);
          break;
        case AttackKind::icp_ref:
          score = attacks::final_score(s, ref_sets[i], client, AttackKind::icp_ref, reduction);
          break;
        case AttackKind::loss:
          score = attacks::loss_attack(s, client);
          break;
        case AttackKind::zlib:
          score = attacks::zlib_attack(s, client);
          break;
        case AttackKind::mink:
          score = attacks::mink_attack(s, client, a.mink_k);
          break;
        case AttackKind::minkpp:
          score = attacks::minkpp_attack(s, client, a.mink_k);
          break;
        case AttackKind::recall:
          score = attacks::recall_attack(s, recall_prefix, client);
          break;
      }
      records.push_back(attacks::to_json(score));
    }
  }

  const fs::path out(c.out);
  fs::create_directories(out);
  const fs::path scores_path = a.scores_out.empty() ? out / "scores.jsonl" : fs::path(a.scores_out);
  io::write_file_atomic(scores_path, jsonl_text(records));

  json names = json::array();
  for (auto k : active) names.push_back(std::string(attacks::to_string(k)));
  json effective{{"attacks", names},
                 {"probe_strategy", a.probe_strategy},
                 {"k", a.k},
                 {"mask_rate", a.mask_rate},
                 {"ref_k", a.ref_k},
                 {"shots", a.shots},
                 {"mink_k", a.mink_k},
                 {"temperature", a.temperature},
                 {"embedder", a.embedder},
                 {"ll_reduction", a.ll_reduction},
                 {"seed", c.seed},
                 {"cohort_sha256", file_digest(a.cohort)},
                 {"probes_sha256", file_digest(a.probes)},
                 {"reference_pool_sha256", file_digest(a.reference_pool)},
                 {"prefix_pool_sha256", file_digest(a.prefix_pool)}};
  json meta{{"model_id", client.model_id()},
            {"seeds", {{"run", c.seed}}},
            {"config_digest", sha256_hex(effective.dump())},
            {"skipped_attacks", skipped},
            {"attacks", names}};
  io::write_file_atomic(out / "run_meta.json", meta.dump(2) + "\n");
  std::cout << "wrote " << records.size() << " scores to " << scores_path.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------------ eval

struct EvalArgs {
  std::string scores;
  std::string meta;
  std::string fpr = "0.01,0.05";
};

int cmd_eval(CLI::App* sub, Common& c, EvalArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--scores", a.scores);
  merge("--meta", a.meta);
  merge("--fpr", a.fpr);

  const fs::path out(c.out);
  const std::string scores_path = a.scores.empty() ? (out / "scores.jsonl").string() : a.scores;
  require_file(scores_path, "score file");
  const auto targets = parse_doubles(a.fpr, "fpr");
  for (double t : targets) {
    if (!(t >= 0 && t <= 1)) throw ConfigError("fpr targets must lie in [0, 1]");
  }

  std::map<std::string, metrics::LabeledScores> by_attack;
  std::istringstream in(io::read_file(scores_path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(lineno, "score line is not JSON");
    const auto s = attacks::attack_score_from_json(j);
    auto& ls = by_attack[std::string(attacks::to_string(s.attack))];
    if (s.label == corpus::Label::unknown) throw ValidationError("score for '" + s.sample_id + "' has no label");
    ls.add(s.score, s.label == corpus::Label::member);
  }

  metrics::EvalReport report;
  std::string meta_path = a.meta;
  if (meta_path.empty()) {
    auto sibling = fs::path(scores_path).parent_path() / "run_meta.json";
    if (fs::exists(sibling)) meta_path = sibling.string();
  }
  if (!meta_path.empty()) {
    require_file(meta_path, "run metadata");
    report.metadata = json::parse(io::read_file(meta_path));
  }

  json errors = json::object();
  for (const auto& [name, ls] : by_attack) {
    try {
      report.attacks.emplace(name, metrics::evaluate(ls, targets));
    } catch (const StatisticsError& e) {
      std::cerr << "error: " << name << ": " << e.what() << "\n";
      errors[name] = e.what();
    }
  }
  if (!errors.empty()) report.metadata["errors"] = errors;

  fs::create_directories(out);
  metrics::write_report(report, out / "report.json", metrics::ReportFormat::json);
  metrics::write_report(report, out / "report.csv", metrics::ReportFormat::csv);
  for (const auto& [name, r] : report.attacks) io::write_file_atomic(out / ("roc_" + name + ".csv"), metrics::roc_to_csv_text(r.roc));

  std::cout << metrics::report_to_csv_text(report);
  return errors.empty() ? kExitOk : kExitFailure;
}

// -------------------------------------------------------------- validate-proxy

struct ProxyArgs {
  std::string cohort;
  std::string model;
  std::string corpus;
  std::size_t n = 160;
  int k = 5;
  double mask_rate = 0.7;
  double eta = 1.0;
  bool self_test = false;
  std::size_t permutations = 10000;
  int order = 2;
  double alpha = 0.1;
  double lambda = 1.0;
};

int cmd_validate_proxy(CLI::App* sub, Common& c, ProxyArgs& a) {
  load_common(sub, c);
  ConfigMerge merge(sub, c.cfg);
  merge("--cohort", a.cohort);
  merge("--model", a.model);
  merge("--corpus", a.corpus);
  merge("--n", a.n);
  merge("--k", a.k);
  merge("--mask-rate", a.mask_rate);
  merge("--eta", a.eta);
  merge("--self-test", a.self_test);
  merge("--permutations", a.permutations);
  merge("--order", a.order);
  merge("--alpha", a.alpha);
  merge("--lambda", a.lambda);
  if (a.k < 1) throw ConfigError("validate-proxy needs K >= 1");

  std::optional<mock::NGramModel> model;
  std::optional<synthetic::Setup> setup;
  if (!c.endpoint.empty()) {
    provider::HttpProvider http(c.endpoint);
    auto j = http.mock_model();
    if (!j) throw CapabilityError("endpoint " + c.endpoint + " is not a mock provider; proxy validation needs the train-step oracle");
    model = mock::NGramModel::from_json(*j);
  } else if (!a.model.empty()) {
    require_file(a.model, "model file");
    model = mock::NGramModel::from_json(json::parse(io::read_file(a.model)));
  } else if (!a.corpus.empty()) {
    require_file(a.corpus, "fit corpus");
    model = mock::NGramModel::fit(corpus::load_jsonl(a.corpus), {a.order, a.alpha, a.lambda, a.eta});
  } else {
    synthetic::Options o;
    o.model = {a.order, a.alpha, a.lambda, a.eta};
    setup = synthetic::make_setup(o);
  }

  std::vector<corpus::Sample> cohort;
  if (!a.cohort.empty()) {
    cohort = load_cohort(a.cohort);
  } else if (setup) {
    cohort = setup->cohort(a.n / 2);
  } else {
    throw ConfigError("--cohort is required unless the default synthetic setup is used");
  }
  const auto& m = setup ? setup->model : *model;

  std::vector<std::vector<probes::ProbeContext>> sets;
  for (const auto& s : cohort) sets.push_back(probes::random_mask_probes(s, a.mask_rate, static_cast<std::size_t>(a.k), c.seed));
  attacks::ProxyOptions popts;
  popts.eta = a.eta;
  popts.self_test = a.self_test;
  const auto result = attacks::validate_proxy(cohort, sets, m, popts);

  std::vector<double> truth, icp;
  std::string csv = "sample_id,label,true_gain,icp_gain\n";
  for (const auto& p : result.points) {
    truth.push_back(p.true_gain);
    icp.push_back(p.icp_gain);
    csv += p.sample_id + "," + std::string(corpus::to_string(p.label)) + "," + metrics::format_fixed(p.true_gain) +
           "," + metrics::format_fixed(p.icp_gain) + "\n";
  }
  const double p_value = metrics::spearman_permutation_pvalue(truth, icp, a.permutations, c.seed);

  const fs::path out(c.out);
  fs::create_directories(out);
  io::write_file_atomic(out / "proxy_scatter.csv", csv);
  json summary{{"rho", result.rho}, {"p_value", p_value}, {"n", result.points.size()},
               {"permutations", a.permutations}, {"model_id", m.model_id()}, {"self_test", a.self_test}};
  io::write_file_atomic(out / "proxy.json", summary.dump(2) + "\n");
  std::cout << "rho " << metrics::format_fixed(result.rho) << "\n"
            << "p_value " << metrics::format_fixed(p_value) << "\n"
            << "n " << result.points.size() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Black-box membership-inference auditing via in-context probing", "icp-audit"};
  app.require_subcommand(1);

  Common common;
  PrepareArgs prep;
  ServeArgs serve;
  ProbeArgs probe;
  AttackArgs attack;
  EvalArgs eval;
  ProxyArgs proxy;

  auto* s_prep = app.add_subcommand("prepare-data", "Split a dataset and draw a member/nonmember cohort");
  add_common(s_prep, common);
  s_prep->add_option("--input", prep.input, "JSONL dataset");
  s_prep->add_option("--synth-n", prep.synth_n, "Generate a synthetic corpus of this size instead");
  s_prep->add_option("--synth-vocab", prep.synth_vocab, "Synthetic vocabulary size");
  s_prep->add_option("--synth-len-min", prep.synth_len_min, "Shortest synthetic output");
  s_prep->add_option("--synth-len-max", prep.synth_len_max, "Longest synthetic output");
  s_prep->add_option("--ratios", prep.ratios, "train,val,test fractions");
  s_prep->add_option("--cohort-size", prep.cohort_size, "Members (and nonmembers) in the cohort");

  auto* s_serve = app.add_subcommand("serve-mock", "Serve the n-gram mock model over the scoring protocol");
  add_common(s_serve, common);
  s_serve->add_option("--corpus", serve.corpus, "JSONL corpus to fit");
  s_serve->add_option("--model", serve.model, "Saved model JSON (instead of --corpus)");
  s_serve->add_option("--order", serve.order, "n-gram order");
  s_serve->add_option("--alpha", serve.alpha, "Add-alpha smoothing");
  s_serve->add_option("--lambda", serve.lambda, "Context interpolation weight");
  s_serve->add_option("--eta", serve.eta, "Train-step count weight");
  s_serve->add_option("--words-changed", serve.words_changed, "Words replaced per generated variant");
  s_serve->add_option("--host", serve.host, "Bind address");
  s_serve->add_option("--port", serve.port, "Port (0 picks a free one)");
  s_serve->add_option("--save-model", serve.save_model, "Write the fitted model JSON here");

  auto* s_probe = app.add_subcommand("build-probes", "Construct probe contexts for a cohort");
  add_common(s_probe, common);
  s_probe->add_option("--cohort", probe.cohort, "Cohort JSONL");
  s_probe->add_option("--strategy", probe.strategy, "random_mask|min_k_mask|max_k_mask|reference|generated");
  s_probe->add_option("--k", probe.k, "Probes per sample (default 5, or 10 for reference)");
  s_probe->add_option("--mask-rate", probe.mask_rate, "Fraction of response words masked");
  s_probe->add_option("--pool", probe.pool, "Reference pool JSONL");
  s_probe->add_option("--temperature", probe.temperature, "Generation temperature");
  s_probe->add_option("--embedder", probe.embedder, "auto|provider|fallback");
  s_probe->add_option("--probes-out", probe.probes_out, "Output path (default <out>/probes.jsonl)");

  auto* s_attack = app.add_subcommand("run-attack", "Score a cohort with the selected attacks");
  add_common(s_attack, common);
  s_attack->add_option("--cohort", attack.cohort, "Cohort JSONL");
  s_attack->add_option("--attacks", attack.attacks, "Comma list of icp_sp,icp_ref,loss,zlib,mink,minkpp,recall");
  s_attack->add_option("--probes", attack.probes, "Probe JSONL for icp_sp (otherwise built on the fly)");
  s_attack->add_option("--probe-strategy", attack.probe_strategy, "Strategy for on-the-fly icp_sp probes");
  s_attack->add_option("--k", attack.k, "icp_sp probes per sample (default 5)");
  s_attack->add_option("--mask-rate", attack.mask_rate, "Mask rate for masking probes");
  s_attack->add_option("--ref-k", attack.ref_k, "icp_ref probes per sample (default 10)");
  s_attack->add_option("--reference-pool", attack.reference_pool, "Reference pool JSONL for icp_ref");
  s_attack->add_option("--prefix-pool", attack.prefix_pool, "Non-member prefix pool JSONL for recall");
  s_attack->add_option("--shots", attack.shots, "ReCaLL prefix shots");
  s_attack->add_option("--mink-k", attack.mink_k, "k percent for Min-K% and Min-K%++");
  s_attack->add_option("--temperature", attack.temperature, "Generation temperature");
  s_attack->add_option("--embedder", attack.embedder, "auto|provider|fallback");
  s_attack->add_option("--cache", attack.cache, "Score cache log (ICP_AUDIT_CACHE wins)");
  s_attack->add_option("--ll-reduction", attack.ll_reduction, "sum|mean log-likelihood in ICP scores");
  s_attack->add_option("--scores-out", attack.scores_out, "Output path (default <out>/scores.jsonl)");

  auto* s_eval = app.add_subcommand("eval", "Compute AUC, TPR@FPR and ROC curves from a score file");
  add_common(s_eval, common);
  s_eval->add_option("--scores", eval.scores, "Score JSONL (default <out>/scores.jsonl)");
  s_eval->add_option("--meta", eval.meta, "Run metadata JSON (default: run_meta.json beside the scores)");
  s_eval->add_option("--fpr", eval.fpr, "Comma list of FPR operating points");

  auto* s_proxy = app.add_subcommand("validate-proxy", "Correlate ICP gains with true one-step gains on the mock");
  add_common(s_proxy, common);
  s_proxy->add_option("--cohort", proxy.cohort, "Cohort JSONL (default: synthetic setup)");
  s_proxy->add_option("--model", proxy.model, "Saved mock model JSON");
  s_proxy->add_option("--corpus", proxy.corpus, "Corpus to fit the mock on");
  s_proxy->add_option("--n", proxy.n, "Synthetic cohort size (half members)");
  s_proxy->add_option("--k", proxy.k, "Random-mask probes per sample");
  s_proxy->add_option("--mask-rate", proxy.mask_rate, "Mask rate");
  s_proxy->add_option("--eta", proxy.eta, "Train-step weight");
  s_proxy->add_flag("--self-test", proxy.self_test, "Use the true gains as ICP gains (rho must be 1)");
  s_proxy->add_option("--permutations", proxy.permutations, "Permutations for the p-value");
  s_proxy->add_option("--order", proxy.order, "n-gram order");
  s_proxy->add_option("--alpha", proxy.alpha, "Add-alpha smoothing");
  s_proxy->add_option("--lambda", proxy.lambda, "Context interpolation weight");

  std::vector<std::string> argv_rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(argv_rest.begin(), argv_rest.end());
  try {
    app.parse(argv_rest);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (s_prep->parsed()) return cmd_prepare_data(s_prep, common, prep);
    if (s_serve->parsed()) return cmd_serve_mock(s_serve, common, serve);
    if (s_probe->parsed()) return cmd_build_probes(s_probe, common, probe);
    if (s_attack->parsed()) return cmd_run_attack(s_attack, common, attack);
    if (s_eval->parsed()) return cmd_eval(s_eval, common, eval);
    if (s_proxy->parsed()) return cmd_validate_proxy(s_proxy, common, proxy);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

}  // namespace icp::cli
