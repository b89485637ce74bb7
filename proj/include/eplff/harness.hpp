#pragma once

// Online few-shot protocol, preprocessing-stage g_p table, ablation arms, w_max /
// rejection-threshold calibration, and report serialization.

#include "eplff/common.hpp"
#include "eplff/conditioning.hpp"
#include "eplff/datasets.hpp"
#include "eplff/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace eplff::harness {

using conditioning::Stage;
using datasets::GroupedDataset;
using network::kNoneOfTheAbove;

enum class DatasetKind { gas_b1, gas_b7, forest, anuran };
enum class Ablation { raw, no_heterogeneity, full };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gas_b1: return "gas-b1";
    case DatasetKind::gas_b7: return "gas-b7";
    case DatasetKind::forest: return "forest";
    case DatasetKind::anuran: return "anuran";
  }
  return "?";
}

inline DatasetKind dataset_from_string(std::string_view s) {
  for (const auto k : {DatasetKind::gas_b1, DatasetKind::gas_b7, DatasetKind::forest, DatasetKind::anuran})
    if (to_string(k) == s) return k;
  if (s == "gas_b1") return DatasetKind::gas_b1;
  if (s == "gas_b7") return DatasetKind::gas_b7;
  throw InvalidArgument("unknown dataset '" + std::string(s) + "'");
}

inline std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::raw: return "raw";
    case Ablation::no_heterogeneity: return "no-heterogeneity";
    case Ablation::full: return "full";
  }
  return "?";
}

inline Ablation ablation_from_string(std::string_view s) {
  if (s == "raw") return Ablation::raw;
  if (s == "no-heterogeneity" || s == "no_heterogeneity" || s == "no-het") return Ablation::no_heterogeneity;
  if (s == "full") return Ablation::full;
  throw InvalidArgument("unknown ablation '" + std::string(s) + "'");
}

// Parameters -------------------------------------------------------------------------

/// The single network parameterisation shared by every dataset. Only the column count
/// and (for anuran) the GC population per sensor change between datasets.
struct ModelParams {
  conditioning::ConditioningOptions conditioning;
  network::NetworkConfig network;
  network::StdpParams stdp;
  /// Calibrated alongside stdp.w_mean.
  double threshold_fraction = 0.075;
  double validation_fraction = 0.1;
  std::size_t gcs_per_sensor = 200;
  std::size_t anuran_gcs_per_sensor = 300;
  double gas_raw_scale = 5e-5;
};

/// Sets one parameter from its textual key (config files, calibration output).
inline void apply_setting(ModelParams& p, const std::string& key, double v) {
  auto& c = p.conditioning;
  auto& n = p.network;
  auto& s = p.stdp;
  const std::map<std::string, double*> reals{
      {"target_mean", &c.normalization.target_mean},
      {"normalization_epsilon", &c.normalization.epsilon},
      {"v_uni_lo", &c.scaling.v_uni_lo},
      {"v_uni_hi", &c.scaling.v_uni_hi},
      {"duplication_density", &c.duplication.density},
      {"gain_lo", &c.duplication.gain_lo},
      {"gain_hi", &c.duplication.gain_hi},
      {"mc_threshold_lo", &n.mc_threshold.lo},
      {"mc_threshold_hi", &n.mc_threshold.hi},
      {"gc_threshold_lo", &n.gc_threshold.lo},
      {"gc_threshold_hi", &n.gc_threshold.hi},
      {"density_lo", &n.connection_density.lo},
      {"density_hi", &n.connection_density.hi},
      {"a_p", &s.a_p},
      {"a_m", &s.a_m},
      {"tau_p", &s.tau_p},
      {"tau_m", &s.tau_m},
      {"w_scale", &s.w_scale},
      {"w_mean", &s.w_mean},
      {"w_max_spread", &s.w_max_spread},
      {"w_init_fraction", &s.w_init_fraction},
      {"threshold_fraction", &p.threshold_fraction},
      {"validation_fraction", &p.validation_fraction},
      {"gas_raw_scale", &p.gas_raw_scale},
  };
  if (const auto it = reals.find(key); it != reals.end()) {
    *it->second = v;
    return;
  }
  auto as_count = [&](const char* what) {
    if (v < 1 || v != std::floor(v)) throw InvalidArgument(std::string(what) + " must be a positive integer");
    return static_cast<std::size_t>(v);
  };
  if (key == "m") c.duplication.m = as_count("m");
  else if (key == "n") c.duplication.n = as_count("n");
  else if (key == "gcs_per_sensor") p.gcs_per_sensor = as_count("gcs_per_sensor");
  else if (key == "anuran_gcs_per_sensor") p.anuran_gcs_per_sensor = as_count("anuran_gcs_per_sensor");
  else if (key == "gamma_steps") n.gamma_steps = static_cast<int>(as_count("gamma_steps"));
  else if (key == "training_cycles") n.training_cycles = static_cast<int>(as_count("training_cycles"));
  else throw InvalidArgument("unknown parameter '" + key + "'");
}

struct DatasetTraits {
  std::size_t gcs_per_sensor = 200;
  std::optional<double> known_range;
  double raw_scale = 1.0;
  std::size_t probe_per_class = 5;
  /// Class pooled with none-of-the-above once every group is trained.
  std::optional<int> pooled_class;
  bool hierarchical = false;
};

inline DatasetTraits traits_for(DatasetKind kind, const ModelParams& p) {
  DatasetTraits t;
  t.gcs_per_sensor = p.gcs_per_sensor;
  switch (kind) {
    case DatasetKind::gas_b1:
    case DatasetKind::gas_b7:
      t.raw_scale = p.gas_raw_scale;
      t.probe_per_class = 4;
      break;
    case DatasetKind::forest:
      t.pooled_class = 3; // "Other"
      break;
    case DatasetKind::anuran:
      t.gcs_per_sensor = p.anuran_gcs_per_sensor;
      t.known_range = 2.0;
      t.hierarchical = true;
      break;
  }
  return t;
}

// Data location ------------------------------------------------------------------------

/// Layout under a data root: gas/batch{1,7}.dat, forest/{training,testing}.csv,
/// anuran/Frogs_MFCCs.csv.
inline std::filesystem::path default_data_path(DatasetKind kind, const std::filesystem::path& root) {
  switch (kind) {
    case DatasetKind::gas_b1:
    case DatasetKind::gas_b7: return root / "gas";
    case DatasetKind::forest: return root / "forest";
    case DatasetKind::anuran: return root / "anuran";
  }
  return root;
}

/// Loads and splits a dataset. The validation split is fixed by `seed`.
inline GroupedDataset load_dataset(DatasetKind kind, const std::filesystem::path& path, const ModelParams& p,
                                   std::uint64_t seed) {
  switch (kind) {
    case DatasetKind::gas_b1:
    case DatasetKind::gas_b7:
      return datasets::split_validation(datasets::load_gas_drift(path, kind == DatasetKind::gas_b1 ? 1 : 7),
                                        p.validation_fraction, seed);
    case DatasetKind::forest:
      return datasets::load_forest(path, {p.validation_fraction, seed});
    case DatasetKind::anuran:
      return datasets::split_validation(datasets::load_anuran(path), p.validation_fraction, seed);
  }
  throw InvalidArgument("unknown dataset");
}

// Ablation arms ------------------------------------------------------------------------

struct Arm {
  Stage stage = Stage::duplicated;
  bool conditioning_heterogeneity = true;
  bool network_heterogeneity = true;
};

inline Arm arm_for(Ablation a) {
  switch (a) {
    case Ablation::raw: return {Stage::raw, true, true};
    case Ablation::no_heterogeneity: return {Stage::duplicated, false, false};
    case Ablation::full: return {Stage::duplicated, true, true};
  }
  return {};
}

inline conditioning::ConditioningState build_conditioning(const GroupedDataset& ds, const DatasetTraits& t,
                                                          const ModelParams& p, bool heterogeneous,
                                                          std::uint64_t seed) {
  auto opts = p.conditioning;
  opts.scaling.modulate = heterogeneous;
  opts.scaling.raw_fallback_scale = t.raw_scale;
  opts.duplication.heterogeneous = heterogeneous;
  opts.known_range = t.known_range;
  std::vector<Vector> validation;
  for (const auto& s : ds.validation) validation.push_back(s.features);
  return conditioning::make_conditioning(validation, ds.dimension, opts, seed);
}

inline network::EplNetwork build_network(std::size_t columns, std::size_t sensors, const DatasetTraits& t,
                                         const ModelParams& p, bool heterogeneous, std::uint64_t seed) {
  auto cfg = p.network;
  cfg.columns = columns;
  cfg.sensors = sensors;
  cfg.gcs_per_sensor = t.gcs_per_sensor;
  cfg.heterogeneity_enabled = heterogeneous;
  cfg.seed = seed;
  return network::instantiate(cfg, p.stdp);
}

// Scoring ------------------------------------------------------------------------------

struct StageResult {
  std::vector<int> trained_groups;
  std::vector<double> per_group_accuracy;
  /// rows: true group; columns: predicted group, last column none-of-the-above.
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t rejection_count = 0;

  double mean_accuracy() const {
    if (per_group_accuracy.empty()) return 0.0;
    double acc = 0.0;
    for (const auto a : per_group_accuracy) acc += a;
    return acc / static_cast<double>(per_group_accuracy.size());
  }
  bool operator==(const StageResult&) const = default;
};

/// Label of class `c` at a taxonomic level ("species"/"class" is the class itself).
inline std::string level_label(const GroupedDataset& ds, int c, const std::string& level) {
  if (level == "species" || level == "class") return std::to_string(c);
  const auto& taxon = ds.hierarchy.at(c);
  if (level == "genus") return taxon.genus;
  if (level == "family") return taxon.family;
  throw InvalidArgument("unknown label level '" + level + "'");
}

struct ScoringContext {
  const GroupedDataset* ds = nullptr;
  std::string level = "species";
  std::set<int> trained;
  /// Predictions of these classes count as none-of-the-above, and their samples as unknown.
  std::set<int> pooled;
};

/// A sample from a class not represented (at this level) among trained classes is correct
/// iff rejected; otherwise iff the predicted label matches at this level.
inline bool score_one(const ScoringContext& ctx, int true_class, int predicted) {
  if (ctx.pooled.count(predicted)) predicted = kNoneOfTheAbove;
  const bool is_species = ctx.level == "species" || ctx.level == "class";
  const auto truth = level_label(*ctx.ds, true_class, ctx.level);
  bool known = false;
  if (!ctx.pooled.count(true_class)) {
    for (const int t : ctx.trained) {
      if (ctx.pooled.count(t)) continue;
      if (is_species ? t == true_class : level_label(*ctx.ds, t, ctx.level) == truth) {
        known = true;
        break;
      }
    }
  }
  if (!known) return predicted == kNoneOfTheAbove;
  return predicted != kNoneOfTheAbove && level_label(*ctx.ds, predicted, ctx.level) == truth;
}

struct TestItem {
  int true_class = 0;
  int predicted = kNoneOfTheAbove;
};

inline StageResult score_stage(const ScoringContext& ctx, const std::vector<TestItem>& items) {
  const std::size_t groups = ctx.ds->groups.size();
  StageResult r;
  r.trained_groups.assign(ctx.trained.begin(), ctx.trained.end());
  r.confusion.assign(groups, std::vector<std::size_t>(groups + 1, 0));
  std::vector<std::size_t> correct(groups, 0), total(groups, 0);
  for (const auto& it : items) {
    const auto g = static_cast<std::size_t>(it.true_class);
    ++total[g];
    correct[g] += score_one(ctx, it.true_class, it.predicted);
    const bool rejected = it.predicted == kNoneOfTheAbove;
    ++r.confusion[g][rejected ? groups : static_cast<std::size_t>(it.predicted)];
    r.rejection_count += rejected;
  }
  for (std::size_t g = 0; g < groups; ++g) {
    r.per_group_accuracy.push_back(total[g] ? static_cast<double>(correct[g]) / static_cast<double>(total[g]) : 1.0);
  }
  return r;
}

// g_p table ------------------------------------------------------------------------------

/// Probe set: probe_per_class samples drawn from each group (never from validation).
inline std::vector<datasets::Sample> draw_probe_set(const GroupedDataset& ds, std::size_t per_class, std::uint64_t seed) {
  std::vector<datasets::Sample> out;
  Rng rng(derive_seed(seed, 0x960be));
  for (const auto& g : ds.groups) {
    std::vector<std::size_t> order(g.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < std::min(per_class, order.size()); ++k) out.push_back(g.samples[order[k]]);
  }
  return out;
}

/// Probe-weight network sized for the conditioned output of `stage`.
inline network::EplNetwork probe_network(const conditioning::ConditioningState& st, Stage stage, const DatasetTraits& t,
                                         const ModelParams& p, bool heterogeneous, std::uint64_t seed) {
  return network::probe(build_network(st.output_dimension(stage), st.dimension, t, p, heterogeneous, seed));
}

using GpTable = std::map<std::string, double>;

inline GpTable gp_table(const GroupedDataset& ds, const DatasetTraits& t, const ModelParams& p, std::uint64_t seed,
                        bool heterogeneous = true) {
  const auto st = build_conditioning(ds, t, p, heterogeneous, derive_seed(seed, 1));
  const auto probes = draw_probe_set(ds, t.probe_per_class, seed);
  GpTable out;
  for (const auto stage : conditioning::kAllStages) {
    const auto net = probe_network(st, stage, t, p, heterogeneous, derive_seed(seed, 2));
    std::vector<Vector> xs;
    for (const auto& s : probes) xs.push_back(conditioning::condition(s.features, stage, st));
    out[std::string(conditioning::to_string(stage))] =
        conditioning::goodness_of_preprocessing(network::recruitment_counts(net, xs));
  }
  return out;
}

// Protocol -------------------------------------------------------------------------------

struct ProtocolConfig {
  DatasetKind dataset = DatasetKind::gas_b1;
  int shots = 1;
  Ablation ablation = Ablation::full;
  int repeats = 5;
  std::vector<std::string> levels{"species"};
  std::uint64_t seed = 0;
  bool operator==(const ProtocolConfig&) const = default;
};

inline void validate(const ProtocolConfig& c) {
  if (c.shots != 1 && c.shots != 2 && c.shots != 5 && c.shots != 10) {
    throw InvalidArgument("shots must be one of 1, 2, 5, 10");
  }
  if (c.repeats < 1) throw InvalidArgument("repeats must be >= 1");
  if (c.levels.empty()) throw InvalidArgument("at least one label level is required");
}

struct RepeatResult {
  std::uint64_t seed = 0;
  StageResult baseline;
  /// level -> one StageResult per training stage
  std::map<std::string, std::vector<StageResult>> levels;
  double average_accuracy = 0.0;
  bool operator==(const RepeatResult&) const = default;
};

struct LevelSummary {
  double average_accuracy = 0.0;
  double stddev_across_repeats = 0.0;
  /// Repeat-averaged per-group accuracy for each training stage.
  std::vector<std::vector<double>> stage_group_accuracy;
  bool operator==(const LevelSummary&) const = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct ProtocolReport {
  int schema_version = kReportSchemaVersion;
  ProtocolConfig config;
  std::vector<std::string> group_names;
  std::size_t dataset_size = 0;
  double training_fraction = 0.0;
  double threshold_fraction = 0.0;
  double w_mean = 0.0;
  /// Primary-level stages aggregated over repeats (accuracy averaged, counts summed).
  std::vector<StageResult> stages;
  double average_accuracy = 0.0;
  double stddev_across_repeats = 0.0;
  std::map<std::string, LevelSummary> levels;
  GpTable gp_by_stage;
  bool weights_untouched_by_level_scoring = true;
  std::vector<RepeatResult> repeats;
  bool operator==(const ProtocolReport&) const = default;
};

/// State of one trained repeat, for snapshots.
struct Snapshot {
  std::string dataset;
  std::uint64_t seed = 0;
  Stage stage = Stage::duplicated;
  conditioning::ConditioningState conditioning;
  network::EplNetwork network;
  std::vector<Vector> probe_set;
  bool operator==(const Snapshot&) const = default;
};

namespace detail {
inline double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = 0.0;
  for (const auto x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (const auto x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size() - 1));
}
} // namespace detail

/// Runs the online protocol on an already loaded dataset.
inline ProtocolReport run_protocol(const GroupedDataset& ds, const DatasetTraits& traits, const ProtocolConfig& cfg,
                                   const ModelParams& params, Snapshot* snapshot = nullptr) {
  validate(cfg);
  for (const auto& level : cfg.levels) {
    if (level != "species" && level != "class" && (level != "genus" && level != "family")) {
      throw InvalidArgument("unknown label level '" + level + "'");
    }
    if ((level == "genus" || level == "family") && ds.hierarchy.empty()) {
      throw InvalidArgument("dataset '" + ds.name + "' has no " + level + " labels");
    }
  }
  const auto arm = arm_for(cfg.ablation);
  const std::size_t groups = ds.groups.size();

  ProtocolReport report;
  report.config = cfg;
  for (const auto& g : ds.groups) report.group_names.push_back(g.name);
  report.dataset_size = ds.total_size();
  report.threshold_fraction = params.threshold_fraction;
  report.w_mean = params.stdp.w_mean;
  report.gp_by_stage = gp_table(ds, traits, params, cfg.seed, arm.conditioning_heterogeneity);

  for (int r = 0; r < cfg.repeats; ++r) {
    const auto rseed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r) + 1);
    const auto plan = datasets::draw_shots(ds, cfg.shots, rseed);
    report.training_fraction = static_cast<double>(plan.total_shots()) / static_cast<double>(ds.total_size());
    const auto st = build_conditioning(ds, traits, params, arm.conditioning_heterogeneity, derive_seed(rseed, 1));
    auto net = build_network(st.output_dimension(arm.stage), ds.dimension, traits, params, arm.network_heterogeneity,
                             derive_seed(rseed, 2));

    std::vector<Vector> test_x;
    std::vector<int> test_class;
    for (const auto& g : ds.groups) {
      for (const auto i : datasets::test_pool(ds, plan, g.id)) {
        test_x.push_back(conditioning::condition(g.samples[i].features, arm.stage, st));
        test_class.push_back(g.id);
      }
    }
    auto predict_all = [&] {
      std::vector<TestItem> items(test_x.size());
      parallel_for(test_x.size(), [&](std::size_t s) {
        items[s] = {test_class[s], network::classify(net, test_x[s], params.threshold_fraction).label};
      });
      return items;
    };

    RepeatResult rep;
    rep.seed = rseed;
    ScoringContext ctx{&ds, cfg.levels.front(), {}, {}};
    rep.baseline = score_stage(ctx, predict_all());

    for (const auto& g : ds.groups) {
      std::vector<Vector> shots;
      for (const auto i : plan.selected.at(g.id))
        shots.push_back(conditioning::condition(g.samples[i].features, arm.stage, st));
      network::learn_class(net, shots, g.id);

      const auto items = predict_all();
      const auto digest = network::weights_digest(net);
      std::set<int> trained;
      for (const auto& [c, e] : net.learned_ensembles) trained.insert(c);
      std::set<int> pooled;
      if (traits.pooled_class && trained.size() == groups) pooled.insert(*traits.pooled_class);
      for (const auto& level : cfg.levels) {
        rep.levels[level].push_back(score_stage({&ds, level, trained, pooled}, items));
        if (network::weights_digest(net) != digest) report.weights_untouched_by_level_scoring = false;
      }
    }
    double acc = 0.0;
    for (const auto& s : rep.levels.at(cfg.levels.front())) acc += s.mean_accuracy();
    rep.average_accuracy = acc / static_cast<double>(groups);

    if (snapshot && r == 0) {
      snapshot->dataset = std::string(to_string(cfg.dataset));
      snapshot->seed = cfg.seed;
      snapshot->stage = arm.stage;
      snapshot->conditioning = st;
      snapshot->network = net;
      snapshot->probe_set.clear();
      for (const auto& s : draw_probe_set(ds, traits.probe_per_class, cfg.seed))
        snapshot->probe_set.push_back(conditioning::condition(s.features, arm.stage, st));
    }
    report.repeats.push_back(std::move(rep));
  }

  for (const auto& level : cfg.levels) {
    LevelSummary sum;
    std::vector<double> per_repeat;
    sum.stage_group_accuracy.assign(groups, std::vector<double>(groups, 0.0));
    for (const auto& rep : report.repeats) {
      const auto& stages = rep.levels.at(level);
      double acc = 0.0;
      for (std::size_t s = 0; s < groups; ++s) {
        acc += stages[s].mean_accuracy();
        for (std::size_t g = 0; g < groups; ++g)
          sum.stage_group_accuracy[s][g] += stages[s].per_group_accuracy[g] / static_cast<double>(cfg.repeats);
      }
      per_repeat.push_back(acc / static_cast<double>(groups));
    }
    for (const auto a : per_repeat) sum.average_accuracy += a / static_cast<double>(per_repeat.size());
    sum.stddev_across_repeats = detail::stddev(per_repeat);
    report.levels[level] = std::move(sum);
  }
  const auto& primary = report.levels.at(cfg.levels.front());
  report.average_accuracy = primary.average_accuracy;
  report.stddev_across_repeats = primary.stddev_across_repeats;

  for (std::size_t s = 0; s < groups; ++s) {
    StageResult agg = report.repeats.front().levels.at(cfg.levels.front())[s];
    agg.per_group_accuracy = primary.stage_group_accuracy[s];
    for (std::size_t r = 1; r < report.repeats.size(); ++r) {
      const auto& other = report.repeats[r].levels.at(cfg.levels.front())[s];
      agg.rejection_count += other.rejection_count;
      for (std::size_t i = 0; i < agg.confusion.size(); ++i)
        for (std::size_t j = 0; j < agg.confusion[i].size(); ++j) agg.confusion[i][j] += other.confusion[i][j];
    }
    report.stages.push_back(std::move(agg));
  }
  return report;
}

inline ProtocolReport run_protocol(const ProtocolConfig& cfg, const std::filesystem::path& data_path,
                                   const ModelParams& params = {}, Snapshot* snapshot = nullptr) {
  validate(cfg);
  const auto ds = load_dataset(cfg.dataset, data_path, params, cfg.seed);
  return run_protocol(ds, traits_for(cfg.dataset, params), cfg, params, snapshot);
}

inline GpTable run_gp_table(DatasetKind kind, const std::filesystem::path& data_path, std::uint64_t seed,
                            const ModelParams& params = {}) {
  const auto ds = load_dataset(kind, data_path, params, seed);
  return gp_table(ds, traits_for(kind, params), params, seed);
}

inline std::map<Ablation, ProtocolReport> run_ablation_suite(const GroupedDataset& ds, const DatasetTraits& traits,
                                                             ProtocolConfig cfg, const ModelParams& params) {
  std::map<Ablation, ProtocolReport> out;
  for (const auto a : {Ablation::raw, Ablation::no_heterogeneity, Ablation::full}) {
    cfg.ablation = a;
    out[a] = run_protocol(ds, traits, cfg, params);
  }
  return out;
}

inline std::map<Ablation, ProtocolReport> run_ablation_suite(DatasetKind kind, const std::filesystem::path& data_path,
                                                             int shots, std::uint64_t seed,
                                                             const ModelParams& params = {}, int repeats = 5) {
  const auto ds = load_dataset(kind, data_path, params, seed);
  ProtocolConfig cfg;
  cfg.dataset = kind;
  cfg.shots = shots;
  cfg.seed = seed;
  cfg.repeats = repeats;
  return run_ablation_suite(ds, traits_for(kind, params), cfg, params);
}

// Calibration ------------------------------------------------------------------------------

struct CalibrationResult {
  double w_mean = 1.0;
  double threshold_fraction = 0.05;
  double validation_gp = 0.0;
  bool gp_within_tolerance = false;
  double validation_accuracy = 0.0;
};

struct CalibrationGrid {
  std::vector<double> w_mean{0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6};
  std::vector<double> threshold_fraction{0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2};
  double gp_target = 0.94;
  double gp_tolerance = 0.05;
  int repeats = 3;
};

/// Tunes the w_max distribution mean and the rejection threshold using only the
/// validation split of `ds`. w_mean is the grid value whose validation g_p (duplicated
/// stage) is closest to the target; the threshold is then the grid value maximising
/// one-shot protocol accuracy on the validation samples (ties: earlier grid entries).
inline CalibrationResult calibrate(const GroupedDataset& ds, const DatasetTraits& traits, ModelParams params,
                                   std::uint64_t seed, const CalibrationGrid& grid = {}) {
  if (ds.validation.empty()) throw InvalidArgument("calibrate: dataset has no validation split");
  GroupedDataset val;
  val.name = ds.name + "-validation";
  val.dimension = ds.dimension;
  val.class_names = ds.class_names;
  val.hierarchy = ds.hierarchy;
  val.validation = ds.validation;
  for (const auto& g : ds.groups) val.groups.push_back({g.id, g.name, {}});
  for (const auto& s : ds.validation) val.groups[static_cast<std::size_t>(s.class_id)].samples.push_back(s);

  const auto st = build_conditioning(val, traits, params, true, derive_seed(seed, 1));
  std::vector<Vector> xs;
  for (const auto& s : ds.validation) xs.push_back(conditioning::condition(s.features, Stage::duplicated, st));

  CalibrationResult best;
  best.validation_gp = -1.0;
  for (const double w : grid.w_mean) {
    params.stdp.w_mean = w;
    const auto net = probe_network(st, Stage::duplicated, traits, params, true, derive_seed(seed, 2));
    const double gp = conditioning::goodness_of_preprocessing(network::recruitment_counts(net, xs));
    if (best.validation_gp < 0 || std::abs(gp - grid.gp_target) < std::abs(best.validation_gp - grid.gp_target)) {
      best.w_mean = w;
      best.validation_gp = gp;
    }
  }
  best.gp_within_tolerance = std::abs(best.validation_gp - grid.gp_target) <= grid.gp_tolerance;

  best.validation_accuracy = -1.0;
  ProtocolConfig cfg;
  cfg.shots = 1;
  cfg.repeats = grid.repeats;
  cfg.seed = seed;
  params.stdp.w_mean = best.w_mean;
  for (const double tf : grid.threshold_fraction) {
    params.threshold_fraction = tf;
    const auto rep = run_protocol(val, traits, cfg, params);
    if (rep.average_accuracy > best.validation_accuracy) {
      best.threshold_fraction = tf;
      best.validation_accuracy = rep.average_accuracy;
    }
  }
  return best;
}

// Report serialization ---------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const StageResult& s) {
  j = {{"trained_groups", s.trained_groups}, {"per_group_accuracy", s.per_group_accuracy},
       {"mean_accuracy", s.mean_accuracy()}, {"confusion", s.confusion}, {"rejection_count", s.rejection_count}};
}
inline void from_json(const nlohmann::json& j, StageResult& s) {
  j.at("trained_groups").get_to(s.trained_groups);
  j.at("per_group_accuracy").get_to(s.per_group_accuracy);
  j.at("confusion").get_to(s.confusion);
  j.at("rejection_count").get_to(s.rejection_count);
}
inline void to_json(nlohmann::json& j, const ProtocolConfig& c) {
  j = {{"dataset", std::string(to_string(c.dataset))}, {"shots", c.shots},
       {"ablation", std::string(to_string(c.ablation))}, {"repeats", c.repeats},
       {"levels", c.levels}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, ProtocolConfig& c) {
  c.dataset = dataset_from_string(j.at("dataset").get<std::string>());
  j.at("shots").get_to(c.shots);
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  j.at("repeats").get_to(c.repeats);
  j.at("levels").get_to(c.levels);
  j.at("seed").get_to(c.seed);
}
inline void to_json(nlohmann::json& j, const RepeatResult& r) {
  j = {{"seed", r.seed}, {"baseline", r.baseline}, {"levels", r.levels}, {"average_accuracy", r.average_accuracy}};
}
inline void from_json(const nlohmann::json& j, RepeatResult& r) {
  j.at("seed").get_to(r.seed);
  j.at("baseline").get_to(r.baseline);
  j.at("levels").get_to(r.levels);
  j.at("average_accuracy").get_to(r.average_accuracy);
}
inline void to_json(nlohmann::json& j, const LevelSummary& l) {
  j = {{"average_accuracy", l.average_accuracy}, {"stddev_across_repeats", l.stddev_across_repeats},
       {"stage_group_accuracy", l.stage_group_accuracy}};
}
inline void from_json(const nlohmann::json& j, LevelSummary& l) {
  j.at("average_accuracy").get_to(l.average_accuracy);
  j.at("stddev_across_repeats").get_to(l.stddev_across_repeats);
  j.at("stage_group_accuracy").get_to(l.stage_group_accuracy);
}
inline void to_json(nlohmann::json& j, const ProtocolReport& r) {
  j = {{"schema", "eplff-protocol-report"}, {"schema_version", r.schema_version},
       {"config", r.config}, {"group_names", r.group_names}, {"dataset_size", r.dataset_size},
       {"training_fraction", r.training_fraction}, {"threshold_fraction", r.threshold_fraction},
       {"w_mean", r.w_mean}, {"stages", r.stages}, {"average_accuracy", r.average_accuracy},
       {"stddev_across_repeats", r.stddev_across_repeats}, {"levels", r.levels},
       {"gp_by_stage", r.gp_by_stage}, {"weights_untouched_by_level_scoring", r.weights_untouched_by_level_scoring},
       {"repeats", r.repeats}};
}
inline void from_json(const nlohmann::json& j, ProtocolReport& r) {
  if (j.at("schema") != "eplff-protocol-report") throw SchemaError("not a protocol report");
  j.at("schema_version").get_to(r.schema_version);
  if (r.schema_version != kReportSchemaVersion) throw SchemaError("unsupported report schema version");
  j.at("config").get_to(r.config);
  j.at("group_names").get_to(r.group_names);
  j.at("dataset_size").get_to(r.dataset_size);
  j.at("training_fraction").get_to(r.training_fraction);
  j.at("threshold_fraction").get_to(r.threshold_fraction);
  j.at("w_mean").get_to(r.w_mean);
  j.at("stages").get_to(r.stages);
  j.at("average_accuracy").get_to(r.average_accuracy);
  j.at("stddev_across_repeats").get_to(r.stddev_across_repeats);
  j.at("levels").get_to(r.levels);
  j.at("gp_by_stage").get_to(r.gp_by_stage);
  j.at("weights_untouched_by_level_scoring").get_to(r.weights_untouched_by_level_scoring);
  j.at("repeats").get_to(r.repeats);
}

enum class ReportFormat { json, csv };

inline ReportFormat format_from_string(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw InvalidArgument("unknown report format '" + std::string(s) + "'");
}

/// One row per (level, training stage, group) with the repeat-averaged accuracy.
inline std::string report_csv(const ProtocolReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "level,stage,trained_groups,group,accuracy\n";
  for (const auto& level : r.config.levels) {
    const auto& sum = r.levels.at(level);
    for (std::size_t s = 0; s < sum.stage_group_accuracy.size(); ++s)
      for (std::size_t g = 0; g < sum.stage_group_accuracy[s].size(); ++g)
        out << level << ',' << (s + 1) << ',' << (s + 1) << ',' << r.group_names[g] << ','
            << sum.stage_group_accuracy[s][g] << '\n';
  }
  return out.str();
}

inline std::string report_text(const ProtocolReport& r, ReportFormat f) {
  if (f == ReportFormat::csv) return report_csv(r);
  return nlohmann::json(r).dump(2) + "\n";
}

/// Writes atomically: content goes to a sibling temp file that is renamed into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content,
                              std::ios::openmode mode = std::ios::out) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void emit_report(const ProtocolReport& r, const std::filesystem::path& path, ReportFormat f) {
  write_file_atomic(path, report_text(r, f));
}

inline ProtocolReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return nlohmann::json::parse(in).get<ProtocolReport>();
}

// Snapshot files (CBOR) ----------------------------------------------------------------------

inline constexpr int kSnapshotVersion = 1;

inline void to_json(nlohmann::json& j, const Snapshot& s) {
  j = {{"format", "eplff-snapshot"}, {"version", kSnapshotVersion}, {"dataset", s.dataset},
       {"seed", s.seed}, {"stage", std::string(conditioning::to_string(s.stage))},
       {"conditioning", s.conditioning}, {"network", s.network}, {"probe_set", s.probe_set}};
}
inline void from_json(const nlohmann::json& j, Snapshot& s) {
  if (j.at("format") != "eplff-snapshot" || j.at("version").get<int>() != kSnapshotVersion) {
    throw SchemaError("unsupported snapshot");
  }
  j.at("dataset").get_to(s.dataset);
  j.at("seed").get_to(s.seed);
  s.stage = conditioning::stage_from_string(j.at("stage").get<std::string>());
  j.at("conditioning").get_to(s.conditioning);
  j.at("network").get_to(s.network);
  j.at("probe_set").get_to(s.probe_set);
}

inline void save_snapshot(const Snapshot& s, const std::filesystem::path& path) {
  const auto bytes = nlohmann::json::to_cbor(nlohmann::json(s));
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()), std::ios::out | std::ios::binary);
}

inline Snapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return nlohmann::json::from_cbor(bytes).get<Snapshot>();
}

} // namespace eplff::harness
