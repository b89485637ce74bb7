#include "eplff/cli.hpp"
#include "test_data.hpp"

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace eplff;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the built binary through the shell, capturing stdout and the exit status.
Result run_cli(const std::string& args) {
  const std::string cmd = std::string(EPLFF_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string gas() { return (testing::data_root() / "gas").string(); }

/// Parses an argument list in-process.
std::optional<cli::CliConfig> parse(std::vector<std::string> args) {
  args.insert(args.begin(), "eplff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  return cli::parse_args(static_cast<int>(argv.size()), argv.data(), sink);
}

} // namespace

TEST_CASE("usage errors exit 2 and leave no output file") {
  testing::TempDir dir;
  const auto out = dir.path() / "r.json";
  for (const std::string& bad : {"run --dataset gas-b1 --data " + gas() + " --shots 3",
                                "run --dataset wine --data " + gas(),
                                "run --dataset gas-b1 --data " + gas() + " --format xml",
                                "run --dataset gas-b1 --data " + gas() + " --check",
                                "run --dataset gas-b1 --data " + gas() + " --levels genus",
                                std::string("run --dataset gas-b1 --data /nonexistent/path --seed 1"),
                                std::string("frobnicate")}) {
    CAPTURE(bad);
    CHECK(run_cli(bad + " --out " + out.string()).code == cli::kExitUsage);
    CHECK_FALSE(fs::exists(out));
  }
}

TEST_CASE("dataset path falls back to the environment and otherwise is a usage error") {
  ::unsetenv("EPLFF_DATA_DIR");
  CHECK_THROWS_AS(parse({"gp", "--dataset", "gas-b1"}), cli::UsageError);
  ::setenv("EPLFF_DATA_DIR", "/data", 1);
  const auto cfg = parse({"gp", "--dataset", "forest"});
  ::unsetenv("EPLFF_DATA_DIR");
  REQUIRE(cfg);
  CHECK(*cfg->data == fs::path("/data/forest"));
}

TEST_CASE("config files merge under explicit flags") {
  testing::TempDir dir;
  const auto conf = dir.path() / "model.conf";
  std::ofstream(conf) << "# comment line\nw_mean = 1.25  # trailing\nshots = 5\nrepeats=2\nthreshold_fraction=0.12\n";
  const auto cfg = parse({"run", "--dataset", "gas-b1", "--data", "x", "--config", conf.string(), "--shots", "2"});
  REQUIRE(cfg);
  CHECK(cfg->shots == 2);
  CHECK(cfg->repeats == 2);
  CHECK(cfg->params.stdp.w_mean == 1.25);
  CHECK(cfg->params.threshold_fraction == 0.12);

  std::ofstream(conf) << "no_such_key = 1\n";
  CHECK_THROWS_AS(parse({"run", "--dataset", "gas-b1", "--data", "x", "--config", conf.string()}), cli::UsageError);
  std::ofstream(conf) << "just text\n";
  CHECK_THROWS_AS(parse({"run", "--dataset", "gas-b1", "--data", "x", "--config", conf.string()}), cli::UsageError);
}

TEST_CASE("run is deterministic and writes parseable reports") {
  testing::TempDir dir;
  const std::string base = "run --dataset gas-b1 --data " + gas() + " --repeats 1 --seed 11 --config ";
  const auto conf = dir.path() / "small.conf";
  std::ofstream(conf) << "gcs_per_sensor = 40\n";
  const auto a = dir.path() / "a.json", b = dir.path() / "b.json", snap = dir.path() / "s.cbor";
  REQUIRE(run_cli(base + conf.string() + " --out " + a.string() + " --save-snapshot " + snap.string()).code == 0);
  REQUIRE(run_cli(base + conf.string() + " --out " + b.string()).code == 0);
  CHECK(slurp(a) == slurp(b));
  const auto report = harness::read_report(a);
  CHECK(report.config.seed == 11);
  CHECK(report.repeats.size() == 1);

  const auto csv = run_cli(base + conf.string() + " --format csv");
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("level,stage,trained_groups,group,accuracy\n", 0) == 0);

  const auto inspected = run_cli("inspect " + snap.string());
  REQUIRE(inspected.code == 0);
  const auto j = nlohmann::json::parse(inspected.out);
  CHECK(j.at("seed") == 11);
  CHECK(j.at("trained_classes").size() == 6);
  CHECK(j.at("sensors") == 16);
}

TEST_CASE("gp check passes or fails by its thresholds") {
  harness::GpTable good{{"raw", 0.0}, {"scaled", 0.0}, {"normalized", 0.5}, {"duplicated", 0.93}};
  CHECK(cli::check_gp(harness::DatasetKind::gas_b7, good).ok());
  auto bad = good;
  bad["duplicated"] = 0.89;
  CHECK_FALSE(cli::check_gp(harness::DatasetKind::gas_b7, bad).ok());
  CHECK_FALSE(cli::check_gp(harness::DatasetKind::forest, good).ok()); // scaled must be >= 0.8 off gas

  const auto r = run_cli("gp --dataset gas-b1 --data " + gas() + " --seed 5");
  REQUIRE((r.code == 0));
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("schema") == "eplff-gp-table");
  CHECK(j.at("gp").at("raw") == 0.0);
}

TEST_CASE("ablation check ordering") {
  std::map<harness::Ablation, harness::ProtocolReport> arms;
  arms[harness::Ablation::full].average_accuracy = 0.9;
  arms[harness::Ablation::no_heterogeneity].average_accuracy = 0.7;
  arms[harness::Ablation::raw].average_accuracy = 0.4;
  CHECK(cli::check_ablation(arms).ok());
  arms[harness::Ablation::raw].average_accuracy = 0.7;
  CHECK_FALSE(cli::check_ablation(arms).ok());
  arms[harness::Ablation::raw].average_accuracy = 0.66;
  CHECK(cli::check_ablation(arms).failures.size() == 1); // ordering holds, gap does not
}

TEST_CASE("help exits 0") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("run --help").code == 0);
}
