#pragma once

// Ingestion of the three benchmark datasets into a uniform grouped form,
// plus validation holdout and k-shot selection.

#include "eplff/common.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eplff::datasets {

struct Sample {
  Vector features;
  int class_id = 0;
  /// Higher taxonomic labels keyed by level ("genus", "family"); empty for flat datasets.
  std::map<std::string, std::string> aux_labels;
  /// Analyte concentration (ppmv) for gas data.
  std::optional<double> intensity_tag;

  bool operator==(const Sample&) const = default;
};

struct Group {
  int id = 0;
  std::string name;
  std::vector<Sample> samples;

  bool operator==(const Group&) const = default;
};

struct Taxon {
  std::string genus;
  std::string family;
  bool operator==(const Taxon&) const = default;
};

/// Samples partitioned into classes in canonical training order. Group ids are 0-based
/// positions in that order and double as class ids.
struct GroupedDataset {
  std::string name;
  std::size_t dimension = 0;
  std::vector<Group> groups;
  std::vector<Sample> validation;
  std::vector<std::string> class_names;
  std::map<int, Taxon> hierarchy;
  std::vector<std::string> warnings;

  std::size_t training_size() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.samples.size();
    return n;
  }
  std::size_t total_size() const { return training_size() + validation.size(); }

  bool operator==(const GroupedDataset&) const = default;
};

/// k training shots per group; indices refer to positions within Group::samples.
struct ShotPlan {
  int shots_per_group = 0;
  std::uint64_t seed = 0;
  std::map<int, std::vector<std::size_t>> selected;

  std::size_t total_shots() const {
    std::size_t n = 0;
    for (const auto& [g, idx] : selected) n += idx.size();
    return n;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void clip_negatives(GroupedDataset& ds, const std::string& what) {
  std::size_t clipped = 0;
  auto fix = [&](Sample& s) {
    for (auto& v : s.features) {
      if (v < 0.0) {
        v = 0.0;
        ++clipped;
      }
    }
  };
  for (auto& g : ds.groups)
    for (auto& s : g.samples) fix(s);
  for (auto& s : ds.validation) fix(s);
  if (clipped) ds.warnings.push_back(what + ": clipped " + std::to_string(clipped) + " negative values to 0");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Gas sensor drift (UCI): "<class>;<concentration> 1:<v> 2:<v> ... 128:<v>"
// ---------------------------------------------------------------------------

/// UCI gas ids 1..6 (Ethanol, Ethylene, Ammonia, Acetaldehyde, Acetone, Toluene) in training order.
inline constexpr std::array<int, 6> kGasTrainingOrder{3, 4, 5, 2, 1, 6};
inline const std::array<std::string, 6> kGasNames{"Ammonia", "Acetaldehyde", "Acetone",
                                                   "Ethylene", "Ethanol", "Toluene"};

struct GasOptions {
  /// 1-based attribute indices kept; default is the first (steady-state dR) feature of each
  /// of the 16 sensors' 8-feature blocks.
  std::vector<int> feature_indices = [] {
    std::vector<int> idx;
    for (int s = 0; s < 16; ++s) idx.push_back(1 + 8 * s);
    return idx;
  }();
};

/// Parses one batch file's text. Exposed separately from the file loader for testing.
inline GroupedDataset parse_gas_drift(std::istream& in, const GasOptions& opts = {}) {
  GroupedDataset ds;
  ds.name = "gas";
  ds.dimension = opts.feature_indices.size();
  for (std::size_t g = 0; g < kGasTrainingOrder.size(); ++g) {
    ds.groups.push_back({static_cast<int>(g), kGasNames[g], {}});
    ds.class_names.push_back(kGasNames[g]);
  }
  std::map<int, std::size_t> column_of;
  for (std::size_t k = 0; k < opts.feature_indices.size(); ++k) column_of[opts.feature_indices[k]] = k;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto body = detail::trim(line);
    if (body.empty()) continue;

    const auto tokens = [&] {
      std::vector<std::string_view> t;
      std::size_t i = 0;
      while (i < body.size()) {
        while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        std::size_t j = i;
        while (j < body.size() && !std::isspace(static_cast<unsigned char>(body[j]))) ++j;
        if (j > i) t.push_back(body.substr(i, j - i));
        i = j;
      }
      return t;
    }();

    const auto head = tokens.front();
    const auto semi = head.find(';');
    if (semi == std::string_view::npos) throw ParseError("gas: expected '<class>;<concentration>'", lineno);
    const auto cls = detail::to_double(head.substr(0, semi));
    const auto conc = detail::to_double(head.substr(semi + 1));
    if (!cls || !conc || *cls != std::floor(*cls)) throw ParseError("gas: bad label field '" + std::string(head) + "'", lineno);
    const auto order = std::find(kGasTrainingOrder.begin(), kGasTrainingOrder.end(), static_cast<int>(*cls));
    if (order == kGasTrainingOrder.end()) {
      throw RecordError("gas: unknown class id " + std::to_string(static_cast<long long>(*cls)), lineno);
    }

    Sample s;
    s.class_id = static_cast<int>(order - kGasTrainingOrder.begin());
    s.intensity_tag = *conc;
    s.features.assign(ds.dimension, 0.0);
    std::vector<bool> seen(ds.dimension, false);
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) throw ParseError("gas: expected '<index>:<value>'", lineno);
      const auto idx = detail::to_double(tokens[t].substr(0, colon));
      const auto val = detail::to_double(tokens[t].substr(colon + 1));
      if (!idx || !val) throw ParseError("gas: bad attribute '" + std::string(tokens[t]) + "'", lineno);
      const auto it = column_of.find(static_cast<int>(*idx));
      if (it == column_of.end()) continue;
      s.features[it->second] = *val;
      seen[it->second] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ParseError("gas: record lacks a selected attribute", lineno);
    }
    ds.groups[static_cast<std::size_t>(s.class_id)].samples.push_back(std::move(s));
  }
  if (ds.training_size() == 0) throw Error("gas: no samples");
  detail::clip_negatives(ds, "gas");
  return ds;
}

/// path: either a batch file, or a directory holding batch<N>.dat.
inline GroupedDataset load_gas_drift(const std::filesystem::path& path, int batch, const GasOptions& opts = {}) {
  if (batch != 1 && batch != 7) throw InvalidArgument("gas: only batches 1 and 7 are supported");
  const auto file = std::filesystem::is_directory(path) ? path / ("batch" + std::to_string(batch) + ".dat") : path;
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  auto ds = parse_gas_drift(in, opts);
  ds.name = "gas_b" + std::to_string(batch);
  return ds;
}

// ---------------------------------------------------------------------------
// Stratified validation holdout and shot selection
// ---------------------------------------------------------------------------

/// Moves ceil(fraction * N) samples, stratified by class (largest-remainder quotas), into
/// validation. Deterministic under seed.
inline GroupedDataset split_validation(GroupedDataset ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("split_validation: fraction must be in (0,1)");
  const std::size_t n = ds.training_size();
  const auto total = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));

  std::vector<std::size_t> quota(ds.groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    const double exact = fraction * static_cast<double>(ds.groups[g].samples.size());
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r, ++assigned) ++quota[remainders[r].second];

  Rng rng(derive_seed(seed, 0x5a11d));
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    auto& samples = ds.groups[g].samples;
    if (quota[g] >= samples.size()) {
      throw InvalidArgument("split_validation: group '" + ds.groups[g].name + "' would be left empty");
    }
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> held(samples.size(), false);
    for (std::size_t i = 0; i < quota[g]; ++i) held[order[i]] = true;
    std::vector<Sample> keep;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      (held[i] ? ds.validation : keep).push_back(std::move(samples[i]));
    }
    samples = std::move(keep);
  }
  return ds;
}

inline ShotPlan draw_shots(const GroupedDataset& ds, int k, std::uint64_t seed) {
  if (k <= 0) throw InvalidArgument("draw_shots: k must be positive");
  ShotPlan plan;
  plan.shots_per_group = k;
  plan.seed = seed;
  Rng rng(derive_seed(seed, 0x5407));
  for (const auto& g : ds.groups) {
    if (g.samples.size() < static_cast<std::size_t>(k)) {
      throw InvalidArgument("draw_shots: group '" + g.name + "' has " + std::to_string(g.samples.size()) +
                            " samples, fewer than k=" + std::to_string(k));
    }
    std::vector<std::size_t> order(g.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(k));
    plan.selected[g.id] = std::move(order);
  }
  return plan;
}

/// Indices of group g not selected as shots, ascending.
inline std::vector<std::size_t> test_pool(const GroupedDataset& ds, const ShotPlan& plan, int group_id) {
  const auto& g = ds.groups.at(static_cast<std::size_t>(group_id));
  const auto& picked = plan.selected.at(group_id);
  const std::set<std::size_t> chosen(picked.begin(), picked.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.samples.size(); ++i)
    if (!chosen.count(i)) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Forest type mapping (UCI): header + "<class letter>,<27 numeric columns>"
// ---------------------------------------------------------------------------

inline const std::array<std::pair<std::string_view, std::string_view>, 4> kForestClasses{{
    {"s", "Sugi"}, {"h", "Hinoki"}, {"d", "Mixed deciduous"}, {"o", "Other"}}};
inline constexpr std::size_t kForestDimension = 27;

struct ForestOptions {
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Parses concatenated CSV text (each chunk may start with a header row). Validation is
/// split here because the minimum-subtraction correction depends on it.
inline GroupedDataset parse_forest(const std::vector<std::string>& lines, const ForestOptions& opts = {}) {
  GroupedDataset ds;
  ds.name = "forest";
  ds.dimension = kForestDimension;
  for (std::size_t g = 0; g < kForestClasses.size(); ++g) {
    ds.groups.push_back({static_cast<int>(g), std::string(kForestClasses[g].second), {}});
    ds.class_names.emplace_back(kForestClasses[g].second);
  }
  for (std::size_t lineno = 1; lineno <= lines.size(); ++lineno) {
    const auto line = detail::trim(lines[lineno - 1]);
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (detail::lower(detail::trim(cells.front())) == "class") continue; // header row
    if (cells.size() != kForestDimension + 1) {
      throw RecordError("forest: expected " + std::to_string(kForestDimension + 1) + " columns, got " +
                            std::to_string(cells.size()), lineno);
    }
    const auto letter = detail::lower(detail::trim(cells.front()));
    const auto cls = std::find_if(kForestClasses.begin(), kForestClasses.end(),
                                  [&](const auto& c) { return c.first == letter; });
    if (cls == kForestClasses.end()) throw RecordError("forest: unknown class '" + letter + "'", lineno);
    Sample s;
    s.class_id = static_cast<int>(cls - kForestClasses.begin());
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto v = detail::to_double(cells[c]);
      if (!v) throw ParseError("forest: non-numeric cell '" + std::string(cells[c]) + "'", lineno);
      s.features.push_back(*v);
    }
    ds.groups[static_cast<std::size_t>(s.class_id)].samples.push_back(std::move(s));
  }
  if (ds.training_size() == 0) throw Error("forest: no samples");

  ds = split_validation(std::move(ds), opts.validation_fraction, opts.seed);
  Vector minima(ds.dimension, std::numeric_limits<double>::infinity());
  for (const auto& s : ds.validation)
    for (std::size_t i = 0; i < ds.dimension; ++i) minima[i] = std::min(minima[i], s.features[i]);
  auto shift = [&](Sample& s) {
    for (std::size_t i = 0; i < ds.dimension; ++i) s.features[i] -= minima[i];
  };
  for (auto& g : ds.groups)
    for (auto& s : g.samples) shift(s);
  for (auto& s : ds.validation) shift(s);
  detail::clip_negatives(ds, "forest");
  return ds;
}

/// path: a CSV file, or a directory holding training.csv and testing.csv.
inline GroupedDataset load_forest(const std::filesystem::path& path, const ForestOptions& opts = {}) {
  std::vector<std::string> lines;
  if (std::filesystem::is_directory(path)) {
    for (const char* name : {"training.csv", "testing.csv"}) {
      auto chunk = detail::read_lines(path / name);
      lines.insert(lines.end(), std::make_move_iterator(chunk.begin()), std::make_move_iterator(chunk.end()));
    }
  } else {
    lines = detail::read_lines(path);
  }
  return parse_forest(lines, opts);
}

// ---------------------------------------------------------------------------
// Anuran calls (UCI): MFCCs_ 1..MFCCs_22, Family, Genus, Species, RecordID
// ---------------------------------------------------------------------------

inline const std::array<std::string_view, 10> kAnuranSpecies{
    "AdenomeraAndre",        "AdenomeraHylaedactylus", "Ameeregatrivittata", "HylaMinuta",
    "HypsiboasCinerascens",  "HypsiboasCordobae",      "LeptodactylusFuscus", "OsteocephalusOophagus",
    "Rhinellagranulosa",     "ScinaxRuber"};
inline constexpr std::size_t kAnuranDimension = 22;

inline GroupedDataset parse_anuran(const std::vector<std::string>& lines) {
  if (lines.empty()) throw Error("anuran: no samples");
  GroupedDataset ds;
  ds.name = "anuran";
  ds.dimension = kAnuranDimension;
  for (std::size_t g = 0; g < kAnuranSpecies.size(); ++g) {
    ds.groups.push_back({static_cast<int>(g), std::string(kAnuranSpecies[g]), {}});
    ds.class_names.emplace_back(kAnuranSpecies[g]);
  }

  const auto header = detail::split(lines.front(), ',');
  std::vector<std::size_t> mfcc_cols;
  std::optional<std::size_t> family_col, genus_col, species_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = detail::lower(detail::trim(header[c]));
    if (name.rfind("mfccs_", 0) == 0) mfcc_cols.push_back(c);
    if (name == "family") family_col = c;
    if (name == "genus") genus_col = c;
    if (name == "species") species_col = c;
  }
  if (!family_col || !genus_col || !species_col) throw SchemaError("anuran: missing Family/Genus/Species column");
  if (mfcc_cols.size() != kAnuranDimension) {
    throw SchemaError("anuran: expected 22 MFCC columns, found " + std::to_string(mfcc_cols.size()));
  }

  std::size_t clipped = 0;
  for (std::size_t lineno = 2; lineno <= lines.size(); ++lineno) {
    const auto line = detail::trim(lines[lineno - 1]);
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size()) {
      throw RecordError("anuran: expected " + std::to_string(header.size()) + " columns", lineno);
    }
    const auto species = detail::lower(detail::trim(cells[*species_col]));
    const auto it = std::find_if(kAnuranSpecies.begin(), kAnuranSpecies.end(),
                                 [&](std::string_view s) { return detail::lower(s) == species; });
    if (it == kAnuranSpecies.end()) throw RecordError("anuran: unknown species '" + species + "'", lineno);
    Sample s;
    s.class_id = static_cast<int>(it - kAnuranSpecies.begin());
    const Taxon taxon{std::string(detail::trim(cells[*genus_col])), std::string(detail::trim(cells[*family_col]))};
    s.aux_labels = {{"genus", taxon.genus}, {"family", taxon.family}};
    const auto [pos, inserted] = ds.hierarchy.emplace(s.class_id, taxon);
    if (!inserted && !(pos->second == taxon)) {
      throw RecordError("anuran: species '" + species + "' mapped to two different genera/families", lineno);
    }
    for (const auto c : mfcc_cols) {
      auto v = detail::to_double(cells[c]);
      if (!v) throw ParseError("anuran: non-numeric cell '" + std::string(cells[c]) + "'", lineno);
      if (*v < -1.0 || *v > 1.0) {
        ++clipped;
        v = std::clamp(*v, -1.0, 1.0);
      }
      s.features.push_back(*v + 1.0);
    }
    ds.groups[static_cast<std::size_t>(s.class_id)].samples.push_back(std::move(s));
  }
  if (ds.training_size() == 0) throw Error("anuran: no samples");
  if (clipped) ds.warnings.push_back("anuran: " + std::to_string(clipped) + " values outside [-1,1] clipped");
  return ds;
}

/// path: the CSV file, or a directory holding Frogs_MFCCs.csv.
inline GroupedDataset load_anuran(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "Frogs_MFCCs.csv" : path;
  return parse_anuran(detail::read_lines(file));
}

} // namespace eplff::datasets
