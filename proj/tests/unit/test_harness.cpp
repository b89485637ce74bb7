#include "eplff/harness.hpp"
#include "test_data.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>

using namespace eplff;
using namespace eplff::harness;

namespace {

/// Six-class dataset with a two-level taxonomy: classes {0,1} genus A, {2} genus B,
/// {3,4} genus C, {5} genus D; families: A,B -> F1, C,D -> F2.
datasets::GroupedDataset taxonomy_dataset(std::size_t per_class = 5) {
  datasets::GroupedDataset ds;
  ds.dimension = 1;
  const std::vector<std::pair<std::string, std::string>> taxa{{"A", "F1"}, {"A", "F1"}, {"B", "F1"},
                                                              {"C", "F2"}, {"C", "F2"}, {"D", "F2"}};
  for (int c = 0; c < 6; ++c) {
    ds.groups.push_back({c, "c" + std::to_string(c), {}});
    for (std::size_t k = 0; k < per_class; ++k) ds.groups.back().samples.push_back({{1.0}, c, {}, {}});
    ds.hierarchy[c] = {taxa[static_cast<std::size_t>(c)].first, taxa[static_cast<std::size_t>(c)].second};
  }
  return ds;
}

/// Independent statement of the scoring rule.
bool oracle_correct(const datasets::GroupedDataset& ds, const std::string& level, const std::set<int>& trained,
                    const std::set<int>& pooled, int truth, int predicted) {
  auto label = [&](int c) -> std::string {
    if (level == "species") return "s" + std::to_string(c);
    return level == "genus" ? ds.hierarchy.at(c).genus : ds.hierarchy.at(c).family;
  };
  const int pred = pooled.count(predicted) ? -1 : predicted;
  std::set<std::string> known;
  for (const int t : trained)
    if (!pooled.count(t)) known.insert(label(t));
  const bool is_known = !pooled.count(truth) && known.count(label(truth));
  if (!is_known) return pred == -1;
  return pred != -1 && label(pred) == label(truth);
}

} // namespace

TEST_CASE("names round-trip") {
  for (const auto k : {DatasetKind::gas_b1, DatasetKind::gas_b7, DatasetKind::forest, DatasetKind::anuran})
    CHECK(dataset_from_string(to_string(k)) == k);
  for (const auto a : {Ablation::raw, Ablation::no_heterogeneity, Ablation::full})
    CHECK(ablation_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(dataset_from_string("wine"), InvalidArgument);
  CHECK_THROWS_AS(ablation_from_string("half"), InvalidArgument);
}

TEST_CASE("settings by key") {
  ModelParams p;
  apply_setting(p, "w_mean", 1.25);
  apply_setting(p, "m", 3);
  apply_setting(p, "threshold_fraction", 0.2);
  CHECK(p.stdp.w_mean == 1.25);
  CHECK(p.conditioning.duplication.m == 3);
  CHECK(p.threshold_fraction == 0.2);
  CHECK_THROWS_AS(apply_setting(p, "nonsense", 1), InvalidArgument);
  CHECK_THROWS_AS(apply_setting(p, "n", 2.5), InvalidArgument);
}

TEST_CASE("scoring rule matches the oracle for random predictions") {
  const auto ds = taxonomy_dataset();
  Rng rng(1);
  std::uniform_int_distribution<int> cls(-1, 5);
  for (const std::string level : {"species", "genus", "family"}) {
    for (int trial = 0; trial < 3000; ++trial) {
      std::set<int> trained, pooled;
      for (int c = 0; c < 6; ++c)
        if (rng() % 2) trained.insert(c);
      if (rng() % 4 == 0) pooled.insert(static_cast<int>(rng() % 6));
      const int truth = static_cast<int>(rng() % 6);
      const int pred = cls(rng);
      ScoringContext ctx{&ds, level, trained, pooled};
      REQUIRE(score_one(ctx, truth, pred) == oracle_correct(ds, level, trained, pooled, truth, pred));
    }
  }
}

TEST_CASE("open-set contract on a mocked classifier") {
  const auto ds = taxonomy_dataset(20);
  std::vector<TestItem> rejected_all;
  for (const auto& g : ds.groups)
    for (std::size_t k = 0; k < g.samples.size(); ++k) rejected_all.push_back({g.id, kNoneOfTheAbove});

  SECTION("untrained: every rejection is correct") {
    const auto r = score_stage({&ds, "species", {}, {}}, rejected_all);
    CHECK(r.rejection_count == rejected_all.size());
    for (const auto a : r.per_group_accuracy) CHECK(a == 1.0);
  }
  SECTION("after group 1: its samples need their label, the others need rejection") {
    auto items = rejected_all;
    for (auto& it : items)
      if (it.true_class == 0) it.predicted = 0;
    const auto r = score_stage({&ds, "species", {0}, {}}, items);
    for (const auto a : r.per_group_accuracy) CHECK(a == 1.0);
    // a classifier that labels everything as class 0 only gets group 1 right
    for (auto& it : items) it.predicted = 0;
    const auto wrong = score_stage({&ds, "species", {0}, {}}, items);
    CHECK(wrong.per_group_accuracy[0] == 1.0);
    for (std::size_t g = 1; g < 6; ++g) CHECK(wrong.per_group_accuracy[g] == 0.0);
    CHECK(wrong.confusion[3][0] == 20);
    CHECK(wrong.rejection_count == 0);
  }
  SECTION("genus level counts a sibling species as correct") {
    std::vector<TestItem> items{{1, 0}, {1, kNoneOfTheAbove}, {2, kNoneOfTheAbove}};
    const auto r = score_stage({&ds, "genus", {0}, {}}, items);
    CHECK(r.per_group_accuracy[1] == 0.5);
    CHECK(r.per_group_accuracy[2] == 1.0);
  }
  SECTION("pooled class predictions count as rejections") {
    std::vector<TestItem> items{{5, 5}, {4, 5}, {3, 3}};
    const auto r = score_stage({&ds, "species", {0, 1, 2, 3, 4, 5}, {5}}, items);
    CHECK(r.per_group_accuracy[5] == 1.0);
    CHECK(r.per_group_accuracy[4] == 0.0);
    CHECK(r.per_group_accuracy[3] == 1.0);
  }
}

TEST_CASE("stage averages") {
  StageResult s;
  s.per_group_accuracy = {1.0, 0.5, 0.0};
  CHECK(s.mean_accuracy() == 0.5);
}

namespace {

struct SmallRun {
  datasets::GroupedDataset ds;
  DatasetTraits traits;
  ModelParams params;
  ProtocolConfig cfg;
};

SmallRun small_run() {
  SmallRun r;
  r.params.gcs_per_sensor = 40;
  r.ds = load_dataset(DatasetKind::gas_b1, testing::data_root() / "gas", r.params, 3);
  r.traits = traits_for(DatasetKind::gas_b1, r.params);
  r.cfg.dataset = DatasetKind::gas_b1;
  r.cfg.repeats = 2;
  r.cfg.seed = 3;
  return r;
}

} // namespace

TEST_CASE("protocol report structure") {
  auto run = small_run();
  const auto report = run_protocol(run.ds, run.traits, run.cfg, run.params);
  const std::size_t groups = run.ds.groups.size();
  CHECK(report.stages.size() == groups);
  CHECK(report.repeats.size() == 2);
  for (const auto& rep : report.repeats) {
    CHECK(rep.baseline.rejection_count == std::accumulate(rep.baseline.confusion.begin(), rep.baseline.confusion.end(),
                                                          std::size_t{0}, [](std::size_t a, const auto& row) {
                                                            return a + std::accumulate(row.begin(), row.end(), std::size_t{0});
                                                          }));
    double acc = 0.0;
    for (const auto& s : rep.levels.at("species")) acc += s.mean_accuracy();
    CHECK(rep.average_accuracy == Catch::Approx(acc / static_cast<double>(groups)).epsilon(1e-15));
    for (std::size_t s = 0; s < groups; ++s) CHECK(rep.levels.at("species")[s].trained_groups.size() == s + 1);
  }
  CHECK(report.training_fraction == Catch::Approx(6.0 / static_cast<double>(run.ds.total_size())));
  CHECK(report.weights_untouched_by_level_scoring);
  CHECK(report.gp_by_stage.size() == 4);
  CHECK(report.gp_by_stage.at("raw") == 0.0);
}

TEST_CASE("protocol validation") {
  auto run = small_run();
  run.cfg.shots = 3;
  CHECK_THROWS_AS(run_protocol(run.ds, run.traits, run.cfg, run.params), InvalidArgument);
  run.cfg.shots = 1;
  run.cfg.levels = {"genus"};
  CHECK_THROWS_AS(run_protocol(run.ds, run.traits, run.cfg, run.params), InvalidArgument);
}

TEST_CASE("ablation arms share shot plans") {
  auto run = small_run();
  run.cfg.repeats = 1;
  const auto suite = run_ablation_suite(run.ds, run.traits, run.cfg, run.params);
  REQUIRE(suite.size() == 3);
  const auto plan = datasets::draw_shots(run.ds, 1, suite.at(Ablation::raw).repeats[0].seed);
  CHECK(suite.at(Ablation::raw).repeats[0].seed == suite.at(Ablation::full).repeats[0].seed);
  CHECK(datasets::draw_shots(run.ds, 1, suite.at(Ablation::full).repeats[0].seed).selected == plan.selected);
}

TEST_CASE("reports serialize deterministically and round-trip") {
  auto run = small_run();
  const auto a = run_protocol(run.ds, run.traits, run.cfg, run.params);
  const auto b = run_protocol(run.ds, run.traits, run.cfg, run.params);
  testing::TempDir dir;
  emit_report(a, dir.path() / "a.json", ReportFormat::json);
  emit_report(b, dir.path() / "b.json", ReportFormat::json);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(slurp(dir.path() / "a.json") == slurp(dir.path() / "b.json"));
  CHECK(read_report(dir.path() / "a.json") == a);

  emit_report(a, dir.path() / "a.csv", ReportFormat::csv);
  std::ifstream csv(dir.path() / "a.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line == "level,stage,trained_groups,group,accuracy");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == a.stages.size() * a.group_names.size());
}

TEST_CASE("snapshots round-trip exactly") {
  auto run = small_run();
  run.cfg.repeats = 1;
  Snapshot snap;
  run_protocol(run.ds, run.traits, run.cfg, run.params, &snap);
  testing::TempDir dir;
  save_snapshot(snap, dir.path() / "s.cbor");
  const auto back = load_snapshot(dir.path() / "s.cbor");
  CHECK(back == snap);
  CHECK(back.network.learned_ensembles.size() == run.ds.groups.size());
}

TEST_CASE("g_p table: gas raw stage recruits nothing for some probe") {
  ModelParams p;
  const auto gp = run_gp_table(DatasetKind::gas_b1, testing::data_root() / "gas", 7, p);
  CHECK(gp.at("raw") == 0.0);
  for (const auto& [stage, v] : gp) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
