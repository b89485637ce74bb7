#pragma once

// Writers for synthetic stand-ins of the three UCI datasets, byte-compatible with the
// published file layouts. Class counts, dimensionalities and value ranges follow the
// public archives; the generative models are simple parametric sketches of each
// dataset's statistics (sensor-scale spread and sub-linear concentration response for
// the gas array, signed spectral differences for forest, hierarchical MFCC clusters for
// anuran calls).

#include "eplff/common.hpp"
#include "eplff/datasets.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace eplff::surrogate {

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  return out;
}

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

} // namespace detail

// Gas sensor array ---------------------------------------------------------------

/// Per-class sample counts in UCI order (Ethanol, Ethylene, Ammonia, Acetaldehyde, Acetone, Toluene).
inline constexpr std::array<int, 6> kGasBatch1Counts{90, 98, 83, 30, 70, 74};
inline constexpr std::array<int, 6> kGasBatch7Counts{649, 662, 30, 744, 630, 898};

struct GasModel {
  std::array<double, 16> sensor_scale{};
  std::array<std::array<double, 16>, 6> profile{};
  std::array<std::array<double, 16>, 6> exponent{};
  double noise = 0.08;
};

inline GasModel gas_model(int batch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9a5));
  std::normal_distribution<double> z(0.0, 1.0);
  GasModel m;
  for (auto& a : m.sensor_scale) a = std::exp(uniform(rng, std::log(4e3), std::log(6e4)));
  std::array<double, 16> common{};
  for (auto& c : common) c = std::exp(0.5 * z(rng));
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t i = 0; i < 16; ++i) {
      m.profile[c][i] = std::min(1.0, 0.3 * common[i] * std::exp(0.7 * z(rng)));
      m.exponent[c][i] = uniform(rng, 0.75, 0.95);
    }
  }
  if (batch == 7) {
    // Drift: sensitivities, selectivity profiles and noise all degrade after 21 months.
    Rng drift(derive_seed(seed, 0xd71f7));
    for (auto& a : m.sensor_scale) a *= std::exp(0.6 * z(drift));
    for (auto& row : m.profile)
      for (auto& p : row) p = std::min(1.0, p * std::exp(0.35 * z(drift)));
    m.noise = 0.16;
  }
  return m;
}

inline void write_gas_batch(const std::filesystem::path& file, int batch, std::uint64_t seed) {
  if (batch != 1 && batch != 7) throw InvalidArgument("surrogate: gas batch must be 1 or 7");
  const auto model = gas_model(batch, seed);
  const auto& counts = batch == 1 ? kGasBatch1Counts : kGasBatch7Counts;
  Rng rng(derive_seed(seed, 0x9a50 + static_cast<std::uint64_t>(batch)));
  std::normal_distribution<double> z(0.0, 1.0);
  auto out = detail::open_out(file);
  for (std::size_t c = 0; c < 6; ++c) {
    for (int k = 0; k < counts[c]; ++k) {
      const double conc = std::exp(uniform(rng, std::log(10.0), std::log(1000.0)));
      out << (c + 1) << ';' << detail::fixed(conc);
      for (std::size_t s = 0; s < 16; ++s) {
        const double dr = model.sensor_scale[s] * model.profile[c][s] *
                          std::pow(conc / 1000.0, model.exponent[c][s]) * std::exp(model.noise * z(rng));
        // Remaining seven features of the sensor block: normalised dR and signed transients.
        const std::array<double, 8> block{dr,
                                          dr / model.sensor_scale[s] * 10.0,
                                          dr * 0.02 * (1.0 + 0.1 * z(rng)),
                                          dr * 0.03 * (1.0 + 0.1 * z(rng)),
                                          dr * 0.04 * (1.0 + 0.1 * z(rng)),
                                          -dr * 0.002 * (1.0 + 0.1 * z(rng)),
                                          -dr * 0.003 * (1.0 + 0.1 * z(rng)),
                                          -dr * 0.004 * (1.0 + 0.1 * z(rng))};
        for (std::size_t f = 0; f < 8; ++f) out << ' ' << (s * 8 + f + 1) << ':' << detail::fixed(block[f]);
      }
      out << '\n';
    }
  }
}

// Forest type mapping --------------------------------------------------------------

/// Per-class counts (s, h, d, o) in the training and testing CSVs.
inline constexpr std::array<int, 4> kForestTrainingCounts{59, 48, 54, 37};
inline constexpr std::array<int, 4> kForestTestingCounts{136, 38, 105, 46};

inline void write_forest(const std::filesystem::path& dir, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xf02e));
  std::normal_distribution<double> z(0.0, 1.0);
  // Feature blocks: 9 band values, 9 height residuals, 9 slope residuals.
  std::array<double, 27> base{}, spread{};
  for (std::size_t f = 0; f < 27; ++f) {
    if (f < 9) { base[f] = uniform(rng, 40.0, 110.0); spread[f] = uniform(rng, 6.0, 14.0); }
    else if (f < 18) { base[f] = uniform(rng, -25.0, 5.0); spread[f] = uniform(rng, 5.0, 10.0); }
    else { base[f] = uniform(rng, -4.0, 4.0); spread[f] = uniform(rng, 1.5, 3.0); }
  }
  std::array<std::array<double, 27>, 4> centre{};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t f = 0; f < 27; ++f) centre[c][f] = base[f] + 1.4 * spread[f] * z(rng);

  const std::array<const char*, 4> letters{"s", "h", "d", "o"};
  auto write = [&](const std::filesystem::path& file, const std::array<int, 4>& counts) {
    auto out = detail::open_out(file);
    out << "class";
    for (int b = 1; b <= 9; ++b) out << ",b" << b;
    for (int b = 1; b <= 9; ++b) out << ",pred_minus_obs_H_b" << b;
    for (int b = 1; b <= 9; ++b) out << ",pred_minus_obs_S_b" << b;
    out << '\n';
    for (std::size_t c = 0; c < 4; ++c) {
      // "Other" is a heterogeneous catch-all class.
      const double width = c == 3 ? 1.6 : 1.0;
      for (int k = 0; k < counts[c]; ++k) {
        out << letters[c] << ' ';
        for (std::size_t f = 0; f < 27; ++f) {
          const double v = centre[c][f] + width * spread[f] * z(rng);
          out << ',' << (f < 9 ? std::to_string(static_cast<int>(std::lround(std::max(1.0, v)))) : detail::fixed(v, 2));
        }
        out << '\n';
      }
    }
  };
  write(dir / "training.csv", kForestTrainingCounts);
  write(dir / "testing.csv", kForestTestingCounts);
}

// Anuran calls ---------------------------------------------------------------------

struct SpeciesInfo {
  const char* species;
  const char* genus;
  const char* family;
  int count;
  int recordings;
};

inline constexpr std::array<SpeciesInfo, 10> kAnuranSpeciesInfo{{
    {"AdenomeraAndre", "Adenomera", "Leptodactylidae", 672, 8},
    {"AdenomeraHylaedactylus", "Adenomera", "Leptodactylidae", 3478, 11},
    {"Ameeregatrivittata", "Ameerega", "Dendrobatidae", 542, 5},
    {"HylaMinuta", "Dendropsophus", "Hylidae", 310, 11},
    {"HypsiboasCinerascens", "Hypsiboas", "Hylidae", 472, 4},
    {"HypsiboasCordobae", "Hypsiboas", "Hylidae", 1121, 4},
    {"LeptodactylusFuscus", "Leptodactylus", "Leptodactylidae", 270, 4},
    {"OsteocephalusOophagus", "Osteocephalus", "Hylidae", 114, 3},
    {"Rhinellagranulosa", "Rhinella", "Bufonidae", 68, 2},
    {"ScinaxRuber", "Scinax", "Hylidae", 148, 4},
}};

inline void write_anuran(const std::filesystem::path& file, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xa2a2));
  std::normal_distribution<double> z(0.0, 1.0);
  constexpr std::size_t d = datasets::kAnuranDimension;
  // Cepstral coefficients shrink with order; coefficient 1 is the constant-energy term.
  auto coefficient_scale = [](std::size_t f) { return 0.45 / std::sqrt(1.0 + 0.25 * static_cast<double>(f)); };
  auto draw = [&](double sd) {
    std::array<double, d> v{};
    for (std::size_t f = 1; f < d; ++f) v[f] = sd * coefficient_scale(f) * z(rng);
    return v;
  };
  std::map<std::string, std::array<double, d>> family_centre, genus_centre;
  auto out = detail::open_out(file);
  for (std::size_t f = 1; f <= d; ++f) out << "MFCCs_" << (f < 10 ? " " : "") << f << ',';
  out << "Family,Genus,Species,RecordID\n";
  int record_id = 1;
  for (const auto& sp : kAnuranSpeciesInfo) {
    if (!family_centre.count(sp.family)) family_centre[sp.family] = draw(1.0);
    if (!genus_centre.count(sp.genus)) {
      auto g = draw(0.55);
      for (std::size_t f = 0; f < d; ++f) g[f] += family_centre[sp.family][f];
      genus_centre[sp.genus] = g;
    }
    auto species_centre = draw(0.45);
    for (std::size_t f = 0; f < d; ++f) species_centre[f] += genus_centre[sp.genus][f];

    std::vector<std::array<double, d>> recording_centre;
    for (int r = 0; r < sp.recordings; ++r) {
      auto rc = draw(0.25);
      for (std::size_t f = 0; f < d; ++f) rc[f] += species_centre[f];
      recording_centre.push_back(rc);
    }
    for (int k = 0; k < sp.count; ++k) {
      const auto r = static_cast<std::size_t>(k % sp.recordings);
      const auto noise = draw(0.35);
      out << "1.000000000";
      for (std::size_t f = 1; f < d; ++f) {
        const double v = std::clamp(recording_centre[r][f] + noise[f], -1.0, 1.0);
        out << ',' << detail::fixed(v, 9);
      }
      out << ',' << sp.family << ',' << sp.genus << ',' << sp.species << ',' << (record_id + static_cast<int>(r)) << '\n';
    }
    record_id += sp.recordings;
  }
}

/// Writes root/gas/batch{1,7}.dat, root/forest/{training,testing}.csv and
/// root/anuran/Frogs_MFCCs.csv.
inline void write_all(const std::filesystem::path& root, std::uint64_t seed) {
  write_gas_batch(root / "gas" / "batch1.dat", 1, seed);
  write_gas_batch(root / "gas" / "batch7.dat", 7, seed);
  std::filesystem::create_directories(root / "forest");
  write_forest(root / "forest", seed);
  write_anuran(root / "anuran" / "Frogs_MFCCs.csv", seed);
}

} // namespace eplff::surrogate
