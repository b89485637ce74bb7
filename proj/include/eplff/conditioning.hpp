#pragma once

// Signal-conditioning cascade: sensor scaling -> intensity normalization ->
// heterogeneous duplication, and the goodness-of-preprocessing metric.

#include "eplff/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eplff::conditioning {

enum class Stage { raw, scaled, normalized, duplicated };

inline constexpr std::array<Stage, 4> kAllStages{Stage::raw, Stage::scaled, Stage::normalized, Stage::duplicated};

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::raw: return "raw";
    case Stage::scaled: return "scaled";
    case Stage::normalized: return "normalized";
    case Stage::duplicated: return "duplicated";
  }
  return "?";
}

inline Stage stage_from_string(std::string_view s) {
  for (const auto st : kAllStages)
    if (to_string(st) == s) return st;
  throw InvalidArgument("unknown preprocessing stage '" + std::string(s) + "'");
}

struct ScalingParams {
  Vector per_sensor_max;
  Vector v_uni;
  double raw_fallback_scale = 1.0;
  /// Sensor indices that were constantly zero in validation (max floored at epsilon).
  std::vector<std::size_t> flagged;

  std::size_t dimension() const { return per_sensor_max.size(); }
  bool operator==(const ScalingParams&) const = default;
};

struct ScalingOptions {
  double epsilon = 1e-9;
  double v_uni_lo = 0.5;
  double v_uni_hi = 1.0;
  /// Off in the no-heterogeneity ablation: v_uni is all ones.
  bool modulate = true;
  double raw_fallback_scale = 1.0;
};

namespace detail {
inline Vector draw_v_uni(std::size_t d, std::uint64_t seed, const ScalingOptions& opts) {
  Vector v(d, 1.0);
  if (!opts.modulate) return v;
  Rng rng(derive_seed(seed, 0x7a11));
  for (auto& x : v) x = uniform(rng, opts.v_uni_lo, opts.v_uni_hi);
  return v;
}
} // namespace detail

inline ScalingParams fit_scaling(std::span<const Vector> validation, std::uint64_t seed, const ScalingOptions& opts = {}) {
  if (validation.empty()) throw InvalidArgument("fit_scaling: empty validation set");
  const std::size_t d = validation.front().size();
  ScalingParams p;
  p.per_sensor_max.assign(d, 0.0);
  for (const auto& x : validation) {
    check_dimension(x.size(), d, "fit_scaling");
    for (std::size_t i = 0; i < d; ++i) p.per_sensor_max[i] = std::max(p.per_sensor_max[i], x[i]);
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (p.per_sensor_max[i] <= opts.epsilon) {
      p.per_sensor_max[i] = opts.epsilon;
      p.flagged.push_back(i);
    }
  }
  p.v_uni = detail::draw_v_uni(d, seed, opts);
  p.raw_fallback_scale = opts.raw_fallback_scale;
  return p;
}

/// Scaling for inputs whose range is known a priori (no validation estimate needed).
inline ScalingParams known_range_scaling(std::size_t d, double range_max, std::uint64_t seed, const ScalingOptions& opts = {}) {
  if (!(range_max > 0.0)) throw InvalidArgument("known_range_scaling: range must be positive");
  ScalingParams p;
  p.per_sensor_max.assign(d, range_max);
  p.v_uni = detail::draw_v_uni(d, seed, opts);
  p.raw_fallback_scale = opts.raw_fallback_scale;
  return p;
}

/// out[i] = x[i] / max[i] * v_uni[i]. Not clipped: test data may exceed validation maxima.
inline Vector apply_scaling(std::span<const double> x, const ScalingParams& p) {
  check_dimension(x.size(), p.dimension(), "apply_scaling");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / p.per_sensor_max[i] * p.v_uni[i];
  return out;
}

struct NormalizationParams {
  double target_mean = 0.3;
  double epsilon = 1e-9;
  bool operator==(const NormalizationParams&) const = default;
};

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// True when x carries too little total activity to be normalized; such inputs pass
/// through unchanged.
inline bool below_normalization_floor(std::span<const double> x, const NormalizationParams& p) {
  return !(mean(x) > p.epsilon);
}

/// Divisive global normalization: out = x * target_mean / mean(x). Exactly invariant to
/// multiplicative rescaling of x by powers of two, and to ordinary rescaling up to rounding.
inline Vector normalize_intensity(std::span<const double> x, const NormalizationParams& p) {
  if (!(p.target_mean > 0.0) || !(p.epsilon > 0.0)) throw InvalidArgument("normalize_intensity: invalid params");
  Vector out(x.begin(), x.end());
  const double m = mean(x);
  if (!(m > p.epsilon)) return out;
  const double gain = p.target_mean / m;
  for (auto& v : out) v *= gain;
  return out;
}

struct DuplicationConfig {
  std::size_t sensors = 0;
  std::size_t m = 5; // feedforward interneurons per sensor
  std::size_t n = 5; // principal inputs (sister MCs) per sensor
  double density = 0.6;
  /// gains[s * m + j]
  Vector gains;
  /// projection[s * n + i] lists interneurons j (0..m-1, within column s) feeding principal input i.
  std::vector<std::vector<std::size_t>> projection;

  std::size_t output_dimension() const { return sensors * n; }
  bool operator==(const DuplicationConfig&) const = default;
};

struct DuplicationOptions {
  std::size_t m = 5;
  std::size_t n = 5;
  double density = 0.6;
  double gain_lo = 0.5;
  double gain_hi = 1.5;
  /// Off in the no-heterogeneity ablation: every gain is the range midpoint.
  bool heterogeneous = true;
};

inline DuplicationConfig instantiate_duplication(std::size_t sensors, const DuplicationOptions& o, std::uint64_t seed) {
  if (o.m < 1 || o.n < 1) throw InvalidArgument("instantiate_duplication: m and n must be >= 1");
  if (!(o.density > 0.0 && o.density <= 1.0)) throw InvalidArgument("instantiate_duplication: density must be in (0,1]");
  if (!(o.gain_lo < o.gain_hi)) throw InvalidArgument("instantiate_duplication: gain range must satisfy lo < hi");

  DuplicationConfig cfg;
  cfg.sensors = sensors;
  cfg.m = o.m;
  cfg.n = o.n;
  cfg.density = o.density;
  Rng rng(derive_seed(seed, 0xd0b1));
  cfg.gains.resize(sensors * o.m);
  for (auto& g : cfg.gains) g = o.heterogeneous ? uniform(rng, o.gain_lo, o.gain_hi) : 0.5 * (o.gain_lo + o.gain_hi);

  std::bernoulli_distribution edge(o.density);
  cfg.projection.resize(sensors * o.n);
  for (auto& inputs : cfg.projection) {
    do {
      inputs.clear();
      for (std::size_t j = 0; j < o.m; ++j)
        if (edge(rng)) inputs.push_back(j);
    } while (inputs.empty());
  }
  return cfg;
}

/// y[s*n + i] = mean over connected j of gains[s][j] * x[s].
inline Vector apply_duplication(std::span<const double> x, const DuplicationConfig& cfg) {
  check_dimension(x.size(), cfg.sensors, "apply_duplication");
  Vector y(cfg.output_dimension());
  for (std::size_t s = 0; s < cfg.sensors; ++s) {
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const auto& inputs = cfg.projection[s * cfg.n + i];
      double acc = 0.0;
      for (const auto j : inputs) acc += cfg.gains[s * cfg.m + j] * x[s];
      y[s * cfg.n + i] = acc / static_cast<double>(inputs.size());
    }
  }
  return y;
}

/// Goodness of preprocessing over per-sample interneuron spike counts:
///   min(min(v), 1) * (sum_i v_i / max(v)) / dim(v)
/// Zero whenever some sample recruited nothing (the division is then never evaluated).
inline double goodness_of_preprocessing(std::span<const std::size_t> v) {
  if (v.empty()) throw InvalidArgument("goodness_of_preprocessing: empty recruitment vector");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == 0) return 0.0;
  double acc = 0.0;
  for (const auto c : v) acc += static_cast<double>(c) / static_cast<double>(*hi);
  return acc / static_cast<double>(v.size());
}

/// Every frozen random quantity of one instantiated conditioning cascade.
struct ConditioningState {
  std::uint64_t seed = 0;
  std::size_t dimension = 0;
  ScalingParams scaling;
  NormalizationParams normalization;
  DuplicationConfig duplication;

  std::size_t output_dimension(Stage stage) const {
    return stage == Stage::duplicated ? duplication.output_dimension() : dimension;
  }
  bool operator==(const ConditioningState&) const = default;
};

struct ConditioningOptions {
  ScalingOptions scaling;
  NormalizationParams normalization;
  DuplicationOptions duplication;
  /// When set, scaling uses this fixed per-sensor range instead of validation maxima.
  std::optional<double> known_range;
};

inline ConditioningState make_conditioning(std::span<const Vector> validation, std::size_t dimension,
                                           const ConditioningOptions& opts, std::uint64_t seed) {
  ConditioningState st;
  st.seed = seed;
  st.dimension = dimension;
  st.scaling = opts.known_range ? known_range_scaling(dimension, *opts.known_range, seed, opts.scaling)
                                : fit_scaling(validation, seed, opts.scaling);
  check_dimension(st.scaling.dimension(), dimension, "make_conditioning");
  st.normalization = opts.normalization;
  st.duplication = instantiate_duplication(dimension, opts.duplication, seed);
  return st;
}

/// Applies the cascade cumulatively up to `stage`; `raw` only multiplies by the fallback scale.
inline Vector condition(std::span<const double> x, Stage stage, const ConditioningState& st) {
  check_dimension(x.size(), st.dimension, "condition");
  if (stage == Stage::raw) {
    Vector out(x.begin(), x.end());
    for (auto& v : out) v *= st.scaling.raw_fallback_scale;
    return out;
  }
  auto out = apply_scaling(x, st.scaling);
  if (stage == Stage::scaled) return out;
  out = normalize_intensity(out, st.normalization);
  if (stage == Stage::normalized) return out;
  return apply_duplication(out, st.duplication);
}

// Serialization ----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const ScalingParams& p) {
  j = {{"per_sensor_max", p.per_sensor_max}, {"v_uni", p.v_uni},
       {"raw_fallback_scale", p.raw_fallback_scale}, {"flagged", p.flagged}};
}
inline void from_json(const nlohmann::json& j, ScalingParams& p) {
  j.at("per_sensor_max").get_to(p.per_sensor_max);
  j.at("v_uni").get_to(p.v_uni);
  j.at("raw_fallback_scale").get_to(p.raw_fallback_scale);
  j.at("flagged").get_to(p.flagged);
}
inline void to_json(nlohmann::json& j, const NormalizationParams& p) {
  j = {{"target_mean", p.target_mean}, {"epsilon", p.epsilon}};
}
inline void from_json(const nlohmann::json& j, NormalizationParams& p) {
  j.at("target_mean").get_to(p.target_mean);
  j.at("epsilon").get_to(p.epsilon);
}
inline void to_json(nlohmann::json& j, const DuplicationConfig& c) {
  j = {{"sensors", c.sensors}, {"m", c.m}, {"n", c.n}, {"density", c.density},
       {"gains", c.gains}, {"projection", c.projection}};
}
inline void from_json(const nlohmann::json& j, DuplicationConfig& c) {
  j.at("sensors").get_to(c.sensors);
  j.at("m").get_to(c.m);
  j.at("n").get_to(c.n);
  j.at("density").get_to(c.density);
  j.at("gains").get_to(c.gains);
  j.at("projection").get_to(c.projection);
}

inline constexpr int kConditioningSnapshotVersion = 1;

inline void to_json(nlohmann::json& j, const ConditioningState& s) {
  j = {{"format", "eplff-conditioning"}, {"version", kConditioningSnapshotVersion},
       {"seed", s.seed}, {"dimension", s.dimension}, {"scaling", s.scaling},
       {"normalization", s.normalization}, {"duplication", s.duplication}};
}
inline void from_json(const nlohmann::json& j, ConditioningState& s) {
  if (j.at("format") != "eplff-conditioning" || j.at("version").get<int>() != kConditioningSnapshotVersion) {
    throw SchemaError("unsupported conditioning snapshot");
  }
  j.at("seed").get_to(s.seed);
  j.at("dimension").get_to(s.dimension);
  j.at("scaling").get_to(s.scaling);
  j.at("normalization").get_to(s.normalization);
  j.at("duplication").get_to(s.duplication);
}

} // namespace eplff::conditioning
