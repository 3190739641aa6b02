#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>
#include <httplib.h>

#include "icp_audit/attacks.hpp"
#include "icp_audit/cli.hpp"
#include "icp_audit/io.hpp"
#include "icp_audit/mock_provider.hpp"
#include "support.hpp"

using namespace icp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "icp-audit");
  return cli::run(args);
}

fs::path fresh(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("icp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(io::read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// prepare-data output shared by the tests below
const fs::path& prepared() {
  static const fs::path dir = [] {
    auto d = fresh("data");
    EXPECT_EQ(run_cli({"prepare-data", "--synth-n", "400", "--synth-vocab", "300", "--seed", "5", "--cohort-size", "30",
                   "--out", d.string()}),
              0);
    return d;
  }();
  return dir;
}

struct MockFixture {
  corpus::SampleSet train = corpus::load_jsonl(prepared() / "train.jsonl");
  std::shared_ptr<mock::MockProvider> provider =
      std::make_shared<mock::MockProvider>(mock::NGramModel::fit(train, {}), &train);
  test::ServerThread server{provider};
};

MockFixture& mock_server() {
  static MockFixture f;
  return f;
}

// Scores through a mock model but advertises neither full_dist nor embed.
struct LimitedServer {
  std::shared_ptr<mock::MockProvider> provider = mock_server().provider;
  httplib::Server srv;
  std::thread thread;
  int port = 0;

  LimitedServer() {
    srv.Get("/v1/capabilities", [this](const httplib::Request&, httplib::Response& res) {
      auto caps = provider->capabilities();
      caps.full_dist = false;
      caps.embed = false;
      res.set_content(provider::to_json(caps).dump(), "application/json");
    });
    srv.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      auto r = provider::score_request_from_json(json::parse(req.body));
      res.set_content(provider::to_json(provider->score(r, false)).dump(), "application/json");
    });
    port = srv.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~LimitedServer() {
    srv.stop();
    thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST(Cli, HelpListsEveryFlag) {
  EXPECT_EQ(run_cli({"--help"}), 0);
  testing::internal::CaptureStdout();
  EXPECT_EQ(run_cli({"run-attack", "--help"}), 0);
  const auto out = testing::internal::GetCapturedStdout();
  for (const char* flag : {"--config", "--seed", "--out", "--endpoint", "--max-in-flight", "--strict", "--cohort",
                           "--attacks", "--probes", "--k", "--mask-rate", "--ref-k", "--shots", "--mink-k",
                           "--cache", "--ll-reduction"}) {
    EXPECT_NE(out.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"no-such-command"}), 2);
  EXPECT_EQ(run_cli({"eval", "--bogus"}), 2);
  EXPECT_EQ(run_cli({"prepare-data", "--seed", "notanumber"}), 2);
  EXPECT_EQ(run_cli({"prepare-data", "--out", fresh("usage").string()}), 2);
}

TEST(Cli, PrepareData) {
  const auto& d = prepared();
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "cohort.jsonl", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  EXPECT_EQ(corpus::load_jsonl(d / "train.jsonl").size(), 320u);
  EXPECT_EQ(corpus::load_jsonl(d / "val.jsonl").size(), 40u);
  EXPECT_EQ(corpus::load_jsonl(d / "test.jsonl").size(), 40u);
  auto cohort = corpus::load_jsonl(d / "cohort.jsonl");
  EXPECT_EQ(cohort.size(), 60u);

  auto again = fresh("data2");
  ASSERT_EQ(run_cli({"prepare-data", "--synth-n", "400", "--synth-vocab", "300", "--seed", "5", "--cohort-size", "30",
                 "--out", again.string()}),
            0);
  for (const char* f : {"train.jsonl", "cohort.jsonl", "manifest.json"}) {
    EXPECT_EQ(io::read_file(d / f), io::read_file(again / f)) << f;
  }
}

TEST(Cli, PrepareDataFromFileAndOversize) {
  auto d = fresh("input");
  ASSERT_EQ(run_cli({"prepare-data", "--input", (prepared() / "train.jsonl").string(), "--seed", "1", "--cohort-size",
                 "10", "--out", d.string()}),
            0);
  EXPECT_EQ(corpus::load_jsonl(d / "train.jsonl").size(), 256u);
  EXPECT_EQ(run_cli({"prepare-data", "--synth-n", "50", "--cohort-size", "30", "--out", fresh("over").string()}), 1);
  io::write_file_atomic(d / "bad.jsonl", "{\"id\":\"a\"}\n");
  EXPECT_EQ(run_cli({"prepare-data", "--input", (d / "bad.jsonl").string(), "--out", d.string()}), 1);
}

TEST(Cli, ConfigFileAndOverrides) {
  auto d = fresh("config");
  io::write_file_atomic(d / "cfg.json",
                        json{{"synth_n", 100}, {"cohort_size", 5}, {"seed", 3}, {"out", (d / "a").string()}}.dump());
  ASSERT_EQ(run_cli({"prepare-data", "--config", (d / "cfg.json").string()}), 0);
  EXPECT_EQ(corpus::load_jsonl(d / "a" / "cohort.jsonl").size(), 10u);
  ASSERT_EQ(run_cli({"prepare-data", "--config", (d / "cfg.json").string(), "--cohort-size", "7", "--out",
                 (d / "b").string()}),
            0);
  EXPECT_EQ(corpus::load_jsonl(d / "b" / "cohort.jsonl").size(), 14u);
  io::write_file_atomic(d / "broken.json", "[1,2");
  EXPECT_EQ(run_cli({"prepare-data", "--config", (d / "broken.json").string()}), 2);
  EXPECT_EQ(run_cli({"prepare-data", "--config", (d / "missing.json").string()}), 2);
  io::write_file_atomic(d / "typed.json", json{{"synth_n", "many"}}.dump());
  EXPECT_EQ(run_cli({"prepare-data", "--config", (d / "typed.json").string()}), 2);
}

TEST(Cli, RunAttackAndEval) {
  auto& m = mock_server();
  auto d = fresh("attack");
  const auto cohort = (prepared() / "cohort.jsonl").string();
  ASSERT_EQ(run_cli({"run-attack", "--cohort", cohort, "--endpoint", m.server.endpoint(), "--out", d.string(),
                 "--reference-pool", (prepared() / "val.jsonl").string(), "--prefix-pool",
                 (prepared() / "val.jsonl").string(), "--seed", "2"}),
            0);
  auto scores = read_jsonl(d / "scores.jsonl");
  EXPECT_EQ(scores.size(), 60u * 7);
  for (const auto& s : scores) {
    if (s.at("attack") == "icp_sp") EXPECT_EQ(s.at("details").at("probe_scores").size(), 5u);
    if (s.at("attack") == "icp_ref") EXPECT_EQ(s.at("details").at("probe_scores").size(), 10u);
  }
  auto meta = json::parse(io::read_file(d / "run_meta.json"));
  EXPECT_EQ(meta.at("model_id"), m.provider->model().model_id());
  EXPECT_TRUE(meta.at("skipped_attacks").empty());
  EXPECT_TRUE(fs::exists(d / "score_cache.jsonl"));

  // warm cache: identical scores, no scoring traffic needed
  const auto first = io::read_file(d / "scores.jsonl");
  ASSERT_EQ(run_cli({"run-attack", "--cohort", cohort, "--endpoint", m.server.endpoint(), "--out", d.string(),
                 "--reference-pool", (prepared() / "val.jsonl").string(), "--prefix-pool",
                 (prepared() / "val.jsonl").string(), "--seed", "2", "--max-in-flight", "1"}),
            0);
  EXPECT_EQ(io::read_file(d / "scores.jsonl"), first);

  ASSERT_EQ(run_cli({"eval", "--out", d.string()}), 0);
  for (const char* f : {"report.json", "report.csv", "roc_icp_sp.csv", "roc_recall.csv"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  auto report = json::parse(io::read_file(d / "report.json"));
  EXPECT_EQ(report.at("attacks").size(), 7u);
  EXPECT_GT(report.at("attacks").at("icp_sp").at("auc").get<double>(), 0.5);
  EXPECT_EQ(report.at("metadata").at("model_id"), m.provider->model().model_id());
  const auto bytes = io::read_file(d / "report.json");
  ASSERT_EQ(run_cli({"eval", "--out", d.string()}), 0);
  EXPECT_EQ(io::read_file(d / "report.json"), bytes);
}

TEST(Cli, BuildProbesAndUseThem) {
  auto& m = mock_server();
  auto d = fresh("probes");
  const auto cohort = (prepared() / "cohort.jsonl").string();
  ASSERT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", "random_mask", "--k", "3", "--out", d.string()}),
            0);
  EXPECT_EQ(read_jsonl(d / "probes.jsonl").size(), 60u * 3);
  ASSERT_EQ(run_cli({"run-attack", "--cohort", cohort, "--endpoint", m.server.endpoint(), "--out", d.string(),
                 "--attacks", "icp_sp", "--probes", (d / "probes.jsonl").string()}),
            0);
  for (const auto& s : read_jsonl(d / "scores.jsonl")) EXPECT_EQ(s.at("details").at("probe_scores").size(), 3u);

  for (const char* strategy : {"min_k_mask", "max_k_mask", "generated"}) {
    ASSERT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", strategy, "--k", "2", "--endpoint",
                   m.server.endpoint(), "--out", d.string(), "--probes-out", (d / (std::string(strategy) + ".jsonl")).string()}),
              0)
        << strategy;
  }
  EXPECT_EQ(read_jsonl(d / "min_k_mask.jsonl").size(), 60u);
  EXPECT_EQ(read_jsonl(d / "generated.jsonl").size(), 120u);
  ASSERT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", "reference", "--pool",
                 (prepared() / "val.jsonl").string(), "--embedder", "fallback", "--out", d.string()}),
            0);
  EXPECT_EQ(read_jsonl(d / "probes.jsonl").size(), 60u * 10);
  EXPECT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", "reference", "--out", d.string()}), 2);
  EXPECT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", "nope", "--out", d.string()}), 2);
  EXPECT_EQ(run_cli({"build-probes", "--cohort", cohort, "--strategy", "min_k_mask", "--out", d.string()}), 2);
}

TEST(Cli, CapabilityMismatch) {
  LimitedServer limited;
  auto d = fresh("limited");
  const auto cohort = (prepared() / "cohort.jsonl").string();
  ASSERT_EQ(run_cli({"run-attack", "--cohort", cohort, "--endpoint", limited.endpoint(), "--out", d.string(),
                 "--attacks", "loss,minkpp"}),
            0);
  auto meta = json::parse(io::read_file(d / "run_meta.json"));
  EXPECT_EQ(meta.at("skipped_attacks"), json::array({"minkpp"}));
  for (const auto& s : read_jsonl(d / "scores.jsonl")) EXPECT_EQ(s.at("attack"), "loss");
  EXPECT_EQ(run_cli({"run-attack", "--cohort", cohort, "--endpoint", limited.endpoint(), "--out", d.string(),
                 "--attacks", "loss,minkpp", "--strict"}),
            1);
  // validate-proxy needs the mock's train-step oracle
  EXPECT_EQ(run_cli({"validate-proxy", "--endpoint", limited.endpoint(), "--cohort", cohort, "--out", d.string()}), 1);
}

TEST(Cli, UnreachableProvider) {
  auto d = fresh("unreachable");
  EXPECT_EQ(run_cli({"run-attack", "--cohort", (prepared() / "cohort.jsonl").string(), "--endpoint",
                 "http://127.0.0.1:1", "--out", d.string()}),
            1);
  EXPECT_EQ(run_cli({"run-attack", "--cohort", (prepared() / "cohort.jsonl").string(), "--out", d.string()}), 2);
}

TEST(Cli, EvalSingleClass) {
  auto d = fresh("single");
  std::string lines;
  for (int i = 0; i < 3; ++i) {
    lines += attacks::to_json({"m" + std::to_string(i), attacks::AttackKind::loss, -1.0 * i, corpus::Label::member})
                 .dump() +
             "\n";
  }
  lines += attacks::to_json({"x", attacks::AttackKind::zlib, -1.0, corpus::Label::member}).dump() + "\n";
  lines += attacks::to_json({"y", attacks::AttackKind::zlib, -2.0, corpus::Label::nonmember}).dump() + "\n";
  io::write_file_atomic(d / "scores.jsonl", lines);
  EXPECT_EQ(run_cli({"eval", "--out", d.string()}), 1);
  auto report = json::parse(io::read_file(d / "report.json"));
  EXPECT_TRUE(report.at("attacks").contains("zlib"));
  EXPECT_TRUE(report.at("metadata").at("errors").contains("loss"));
}

TEST(Cli, ValidateProxy) {
  auto d = fresh("proxy");
  ASSERT_EQ(run_cli({"validate-proxy", "--self-test", "--n", "20", "--permutations", "200", "--out", d.string()}), 0);
  auto summary = json::parse(io::read_file(d / "proxy.json"));
  EXPECT_NEAR(summary.at("rho").get<double>(), 1.0, 1e-12);
  EXPECT_EQ(summary.at("n"), 20);
  const auto csv = io::read_file(d / "proxy_scatter.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,label,true_gain,icp_gain");

  auto& m = mock_server();
  ASSERT_EQ(run_cli({"validate-proxy", "--endpoint", m.server.endpoint(), "--cohort",
                 (prepared() / "cohort.jsonl").string(), "--permutations", "200", "--out", d.string()}),
            0);
  EXPECT_EQ(json::parse(io::read_file(d / "proxy.json")).at("model_id"), m.provider->model().model_id());

  auto cohort = corpus::load_jsonl(prepared() / "cohort.jsonl").samples;
  cohort.resize(2);
  corpus::write_jsonl(d / "two.jsonl", cohort);
  EXPECT_EQ(run_cli({"validate-proxy", "--cohort", (d / "two.jsonl").string(), "--corpus",
                 (prepared() / "train.jsonl").string(), "--out", d.string()}),
            1);
}
