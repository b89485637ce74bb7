#pragma once

// Command-line front end: argument parsing into CliConfig and dispatch to the harness.
// Exit codes: 0 success, 1 failed --check, 2 usage or I/O error.

#include "eplff/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace eplff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

enum class Command { gp, run, ablate, inspect, calibrate };

/// Thrown for anything that should exit with the usage code.
class UsageError : public Error {
public:
  using Error::Error;
};

struct CliConfig {
  Command command = Command::run;
  harness::DatasetKind dataset = harness::DatasetKind::gas_b1;
  std::optional<std::filesystem::path> data;
  int shots = 1;
  harness::Ablation ablation = harness::Ablation::full;
  int repeats = 5;
  std::vector<std::string> levels{"species"};
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  harness::ReportFormat format = harness::ReportFormat::json;
  std::optional<std::filesystem::path> snapshot_out;
  std::filesystem::path snapshot_in;
  bool check = false;
  harness::ModelParams params;
};

/// Reads "key = value" lines ('#' starts a comment) into a map, preserving the last value.
inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = std::string(datasets::detail::trim(line));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out[std::string(datasets::detail::trim(std::string_view(t).substr(0, eq)))] =
        std::string(datasets::detail::trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto part : datasets::detail::split(s, ','))
    if (const auto t = datasets::detail::trim(part); !t.empty()) out.emplace_back(t);
  return out;
}

inline double parse_number(const std::string& key, const std::string& text) {
  const auto v = datasets::detail::to_double(text);
  if (!v) throw UsageError("config: '" + key + "' needs a number, got '" + text + "'");
  return *v;
}

inline void check_shots(int k) {
  if (k != 1 && k != 2 && k != 5 && k != 10) throw UsageError("--shots must be one of 1, 2, 5, 10");
}

} // namespace detail

/// Parses argv. Throws UsageError for every invalid invocation; returns nullopt when help
/// was printed.
inline std::optional<CliConfig> parse_args(int argc, const char* const* argv, std::ostream& out = std::cout) {
  CLI::App app{"Signal conditioning and few-shot EPL network experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CliConfig cfg;
  std::string dataset, ablation, levels, format = "json", config_file, data, out_path, snapshot_out;
  int shots = 1, repeats = 5;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool needs_dataset) {
    auto* d = sub->add_option("--dataset", dataset, "gas-b1 | gas-b7 | forest | anuran");
    if (needs_dataset) d->required();
    sub->add_option("--data", data, "Dataset file or directory (default: $EPLFF_DATA_DIR/<kind>)");
    sub->add_option("--seed", seed, "Base seed");
    sub->add_option("--out", out_path, "Output file (default: stdout)");
    sub->add_option("--format", format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--config", config_file, "key=value file; explicit flags win");
    sub->add_flag("--check", cfg.check, "Exit 1 when acceptance thresholds are not met (needs --seed)");
  };
  auto protocol = [&](CLI::App* sub) {
    sub->add_option("--shots", shots, "Shots per group: 1, 2, 5 or 10");
    sub->add_option("--repeats", repeats, "Independent repeats")->check(CLI::PositiveNumber);
    sub->add_option("--levels", levels, "Comma-separated label levels (species,genus,family)");
  };

  auto* gp = app.add_subcommand("gp", "Goodness of preprocessing per conditioning stage");
  common(gp, true);
  auto* run = app.add_subcommand("run", "Online few-shot protocol");
  common(run, true);
  protocol(run);
  run->add_option("--ablation", ablation, "raw | no-heterogeneity | full");
  run->add_option("--save-snapshot", snapshot_out, "Write the first repeat's trained state (CBOR)");
  auto* ablate = app.add_subcommand("ablate", "Raw / no-heterogeneity / full arms with shared shot plans");
  common(ablate, true);
  protocol(ablate);
  auto* inspect = app.add_subcommand("inspect", "Describe a saved snapshot");
  std::string snapshot_in;
  inspect->add_option("snapshot", snapshot_in, "Snapshot file")->required();
  inspect->add_option("--out", out_path, "Output file (default: stdout)");
  auto* calibrate = app.add_subcommand("calibrate", "Tune w_max mean and rejection threshold on the gas batch 1 validation split");
  common(calibrate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return std::nullopt;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  cfg.command = sub == gp ? Command::gp : sub == run ? Command::run : sub == ablate ? Command::ablate
                                        : sub == inspect ? Command::inspect : Command::calibrate;
  auto given = [&](const char* flag) { return sub->get_option_no_throw(flag) && sub->count(flag) > 0; };

  // Config file values first; explicit flags override them below.
  if (cfg.command != Command::inspect && !config_file.empty()) {
    for (const auto& [key, value] : read_config_file(config_file)) {
      if (key == "dataset") { if (!given("--dataset")) dataset = value; }
      else if (key == "data") { if (!given("--data")) data = value; }
      else if (key == "shots") { if (!given("--shots")) shots = static_cast<int>(detail::parse_number(key, value)); }
      else if (key == "repeats") { if (!given("--repeats")) repeats = static_cast<int>(detail::parse_number(key, value)); }
      else if (key == "levels") { if (!given("--levels")) levels = value; }
      else if (key == "ablation") { if (!given("--ablation")) ablation = value; }
      else if (key == "seed") {
        if (!given("--seed")) {
          seed = static_cast<std::uint64_t>(detail::parse_number(key, value));
          cfg.seed = seed;
        }
      }
      else {
        try {
          harness::apply_setting(cfg.params, key, detail::parse_number(key, value));
        } catch (const InvalidArgument& e) {
          throw UsageError(std::string("config: ") + e.what());
        }
      }
    }
  }

  try {
    if (cfg.command == Command::inspect) {
      cfg.snapshot_in = snapshot_in;
    } else {
      if (!dataset.empty()) cfg.dataset = harness::dataset_from_string(dataset);
      if (cfg.command == Command::calibrate) cfg.dataset = harness::DatasetKind::gas_b1;
      if (!ablation.empty()) cfg.ablation = harness::ablation_from_string(ablation);
      cfg.format = harness::format_from_string(format);
    }
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (cfg.command == Command::run || cfg.command == Command::ablate) {
    detail::check_shots(shots);
    if (repeats < 1) throw UsageError("--repeats must be >= 1");
    cfg.shots = shots;
    cfg.repeats = repeats;
    if (!levels.empty()) cfg.levels = detail::split_list(levels);
    for (const auto& l : cfg.levels) {
      if (l != "species" && l != "genus" && l != "family") throw UsageError("unknown level '" + l + "'");
      if (l != "species" && cfg.dataset != harness::DatasetKind::anuran) {
        throw UsageError("--levels " + l + " requires --dataset anuran");
      }
    }
  }
  if (given("--seed")) cfg.seed = seed;
  if (cfg.check && !cfg.seed) throw UsageError("--check requires --seed");
  if (cfg.command == Command::calibrate && cfg.format == harness::ReportFormat::csv) {
    throw UsageError("calibrate writes a key=value config; --format does not apply");
  }

  if (cfg.command != Command::inspect) {
    if (!data.empty()) {
      cfg.data = data;
    } else if (const char* env = std::getenv("EPLFF_DATA_DIR"); env && *env) {
      cfg.data = harness::default_data_path(cfg.dataset, env);
    } else {
      throw UsageError("missing dataset path: pass --data or set EPLFF_DATA_DIR");
    }
  }
  if (!out_path.empty()) cfg.out = out_path;
  if (!snapshot_out.empty()) cfg.snapshot_out = snapshot_out;
  if (cfg.out && cfg.snapshot_out && std::filesystem::absolute(*cfg.out) == std::filesystem::absolute(*cfg.snapshot_out)) {
    throw UsageError("--out and --save-snapshot must differ");
  }
  return cfg;
}

/// Shortest text that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Acceptance thresholds applied by --check -------------------------------------------

struct CheckOutcome {
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

inline CheckOutcome check_gp(harness::DatasetKind kind, const harness::GpTable& gp) {
  CheckOutcome c;
  const bool gas = kind == harness::DatasetKind::gas_b1 || kind == harness::DatasetKind::gas_b7;
  if (gas && gp.at("raw") != 0.0) c.failures.push_back("raw g_p must be 0 for gas data");
  if (gas && gp.at("scaled") != 0.0) c.failures.push_back("scaled g_p must be 0 for gas data");
  if (!gas && gp.at("scaled") < 0.8) c.failures.push_back("scaled g_p below 0.8");
  if (gp.at("duplicated") < 0.9) c.failures.push_back("duplicated g_p below 0.90");
  return c;
}

inline CheckOutcome check_run(const harness::ProtocolReport& r) {
  CheckOutcome c;
  for (const auto& rep : r.repeats) {
    std::size_t tested = 0;
    for (const auto& row : rep.baseline.confusion)
      for (const auto n : row) tested += n;
    if (rep.baseline.rejection_count != tested) c.failures.push_back("untrained network accepted a sample");
  }
  if (!r.weights_untouched_by_level_scoring) c.failures.push_back("weights changed during level scoring");
  const auto species = r.levels.find("species");
  if (species != r.levels.end()) {
    for (const auto& [level, sum] : r.levels) {
      if (level != "species" && sum.average_accuracy < species->second.average_accuracy - 0.05) {
        c.failures.push_back(level + " accuracy more than 5 points below species");
      }
    }
  }
  return c;
}

inline CheckOutcome check_ablation(const std::map<harness::Ablation, harness::ProtocolReport>& arms) {
  CheckOutcome c;
  const double full = arms.at(harness::Ablation::full).average_accuracy;
  const double nohet = arms.at(harness::Ablation::no_heterogeneity).average_accuracy;
  const double raw = arms.at(harness::Ablation::raw).average_accuracy;
  if (!(full > nohet && nohet > raw)) c.failures.push_back("ordering full > no-heterogeneity > raw violated");
  if (full - raw < 0.25) c.failures.push_back("full - raw gap below 25 points");
  return c;
}

// Output documents ---------------------------------------------------------------------

inline std::string gp_document(const CliConfig& cfg, const harness::GpTable& gp) {
  if (cfg.format == harness::ReportFormat::csv) {
    std::ostringstream o;
    o << "stage,gp\n";
    for (const auto s : conditioning::kAllStages) {
      o << conditioning::to_string(s) << ',' << shortest(gp.at(std::string(conditioning::to_string(s)))) << '\n';
    }
    return o.str();
  }
  const nlohmann::json j{{"schema", "eplff-gp-table"}, {"schema_version", 1},
                         {"dataset", std::string(harness::to_string(cfg.dataset))},
                         {"seed", cfg.seed.value_or(0)}, {"gp", gp}};
  return j.dump(2) + "\n";
}

inline std::string ablation_document(const CliConfig& cfg, const std::map<harness::Ablation, harness::ProtocolReport>& arms) {
  if (cfg.format == harness::ReportFormat::csv) {
    std::ostringstream o;
    o << "arm," << "level,stage,trained_groups,group,accuracy\n";
    for (const auto& [arm, report] : arms) {
      std::istringstream rows(harness::report_csv(report));
      std::string line;
      std::getline(rows, line);
      while (std::getline(rows, line)) o << harness::to_string(arm) << ',' << line << '\n';
    }
    return o.str();
  }
  nlohmann::json j{{"schema", "eplff-ablation-report"}, {"schema_version", 1}};
  for (const auto& [arm, report] : arms) {
    j["averages"][std::string(harness::to_string(arm))] = report.average_accuracy;
    j["arms"][std::string(harness::to_string(arm))] = report;
  }
  return j.dump(2) + "\n";
}

inline std::string inspect_document(const harness::Snapshot& s) {
  const auto probe = network::probe(s.network);
  nlohmann::json j{{"dataset", s.dataset},
                   {"seed", s.seed},
                   {"stage", std::string(conditioning::to_string(s.stage))},
                   {"sensors", s.conditioning.dimension},
                   {"mcs", s.network.mc_count()},
                   {"gcs", s.network.gc_count()},
                   {"trained_classes", nlohmann::json::array()},
                   {"probe_samples", s.probe_set.size()}};
  for (const auto& [c, e] : s.network.learned_ensembles) j["trained_classes"].push_back(c);
  if (!s.probe_set.empty()) {
    j["probe_gp"] = conditioning::goodness_of_preprocessing(network::recruitment_counts(probe, s.probe_set));
  }
  return j.dump(2) + "\n";
}

inline std::string calibration_document(const harness::CalibrationResult& r) {
  std::ostringstream o;
  o << "# calibrated on the gas batch 1 validation split\n"
    << "# validation g_p " << shortest(r.validation_gp) << (r.gp_within_tolerance ? "" : " (outside target band)")
    << ", validation one-shot accuracy "
    << shortest(r.validation_accuracy) << '\n'
    << "w_mean = " << shortest(r.w_mean) << '\n'
    << "threshold_fraction = " << shortest(r.threshold_fraction) << '\n';
  return o.str();
}

inline void emit(const CliConfig& cfg, const std::string& text, std::ostream& out) {
  if (cfg.out) harness::write_file_atomic(*cfg.out, text);
  else out << text;
}

/// Runs a parsed command. Returns the process exit code.
inline int execute(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  CheckOutcome check;
  switch (cfg.command) {
    case Command::gp: {
      const auto gp = harness::run_gp_table(cfg.dataset, *cfg.data, cfg.seed.value_or(0), cfg.params);
      emit(cfg, gp_document(cfg, gp), out);
      check = check_gp(cfg.dataset, gp);
      break;
    }
    case Command::run: {
      harness::ProtocolConfig pc{cfg.dataset, cfg.shots, cfg.ablation, cfg.repeats, cfg.levels, cfg.seed.value_or(0)};
      harness::Snapshot snap;
      const auto report = harness::run_protocol(pc, *cfg.data, cfg.params, cfg.snapshot_out ? &snap : nullptr);
      emit(cfg, harness::report_text(report, cfg.format), out);
      if (cfg.snapshot_out) harness::save_snapshot(snap, *cfg.snapshot_out);
      check = check_run(report);
      break;
    }
    case Command::ablate: {
      const auto ds = harness::load_dataset(cfg.dataset, *cfg.data, cfg.params, cfg.seed.value_or(0));
      harness::ProtocolConfig pc{cfg.dataset, cfg.shots, harness::Ablation::full, cfg.repeats, cfg.levels, cfg.seed.value_or(0)};
      const auto arms = harness::run_ablation_suite(ds, harness::traits_for(cfg.dataset, cfg.params), pc, cfg.params);
      emit(cfg, ablation_document(cfg, arms), out);
      check = check_ablation(arms);
      break;
    }
    case Command::inspect:
      emit(cfg, inspect_document(harness::load_snapshot(cfg.snapshot_in)), out);
      break;
    case Command::calibrate: {
      const auto ds = harness::load_dataset(harness::DatasetKind::gas_b1, *cfg.data, cfg.params, cfg.seed.value_or(0));
      const auto r = harness::calibrate(ds, harness::traits_for(harness::DatasetKind::gas_b1, cfg.params), cfg.params,
                                        cfg.seed.value_or(0));
      emit(cfg, calibration_document(r), out);
      break;
    }
  }
  if (cfg.check && !check.ok()) {
    for (const auto& f : check.failures) err << "check failed: " << f << '\n';
    return kExitCheckFailed;
  }
  return kExitOk;
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const auto cfg = parse_args(argc, argv, out);
    if (!cfg) return kExitOk;
    return execute(*cfg, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n(run with --help for usage)\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

} // namespace eplff::cli
