#pragma once

// Feedforward MC -> GC learning network: spike-phase encoding against a discretised
// gamma cycle, heterogeneous GC layer, hSTDP on MC->GC weights, and open-set readout by
// thresholded Hamming distance between GC ensembles.

#include "eplff/common.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace eplff::network {

inline constexpr int kSilent = -1;
inline constexpr int kNoneOfTheAbove = -1;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double midpoint() const { return 0.5 * (lo + hi); }
  bool operator==(const Range&) const = default;
};

struct NetworkConfig {
  std::size_t columns = 0;        // MCs (sensors * sister MCs per sensor)
  std::size_t sensors = 0;        // physical inputs; sets the GC population size
  std::size_t gcs_per_sensor = 200;
  int gamma_steps = 20;           // phase bins per gamma cycle
  int training_cycles = 5;        // gamma cycles of plasticity per training shot
  Range mc_threshold{0.05, 0.45};
  /// GC threshold as a fraction of the GC's MC in-degree (in weight units).
  Range gc_threshold{0.3, 0.7};
  Range connection_density{0.1, 0.5};
  bool heterogeneity_enabled = true;
  std::uint64_t seed = 0;

  std::size_t gc_count() const { return sensors * gcs_per_sensor; }
  bool operator==(const NetworkConfig&) const = default;
};

struct StdpParams {
  double a_p = 1.0;
  double a_m = 0.5;
  double tau_p = 3.0;
  double tau_m = 3.0;
  /// Small enough that training later classes barely moves earlier stored ensembles.
  double w_scale = 0.003;
  /// Mean of the per-synapse w_max distribution; also the probe weight. Default is the
  /// value `eplff calibrate` selects on the gas batch 1 validation split.
  double w_mean = 1.5;
  /// w_max ~ U[w_mean * (1 - spread), w_mean * (1 + spread)] when heterogeneous.
  double w_max_spread = 0.5;
  /// Initial weight is min(w_init_fraction * w_mean, w_max).
  double w_init_fraction = 1.0;
  bool operator==(const StdpParams&) const = default;
};

/// Binary GC activation pattern.
class GcEnsemble {
public:
  GcEnsemble() = default;
  explicit GcEnsemble(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

  std::size_t size() const noexcept { return size_; }
  void set(std::size_t j) { words_[j / 64] |= std::uint64_t{1} << (j % 64); }
  bool test(std::size_t j) const { return (words_[j / 64] >> (j % 64)) & 1U; }
  std::size_t spike_count() const {
    std::size_t n = 0;
    for (const auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  std::span<const std::uint64_t> words() const { return words_; }

  friend std::size_t hamming(const GcEnsemble& a, const GcEnsemble& b) {
    check_dimension(b.size_, a.size_, "hamming");
    std::size_t n = 0;
    for (std::size_t k = 0; k < a.words_.size(); ++k) n += static_cast<std::size_t>(std::popcount(a.words_[k] ^ b.words_[k]));
    return n;
  }
  bool operator==(const GcEnsemble&) const = default;

private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Network state. Matrices are MC-major: element (i, j) lives at i * gc_count + j.
struct EplNetwork {
  NetworkConfig config;
  StdpParams stdp;
  Vector mc_thresholds;
  Vector gc_thresholds;
  std::vector<std::uint8_t> connectivity;
  Vector w_max;
  Vector weights;
  std::map<int, GcEnsemble> learned_ensembles;

  std::size_t mc_count() const { return mc_thresholds.size(); }
  std::size_t gc_count() const { return gc_thresholds.size(); }
  std::size_t at(std::size_t mc, std::size_t gc) const { return mc * gc_count() + gc; }
  bool operator==(const EplNetwork&) const = default;
};

/// MC spike bin per column, kSilent for no spike.
using SpikePhases = std::vector<int>;

struct CycleResult {
  std::vector<int> gc_spike_bin; // kSilent when the GC did not fire
  GcEnsemble ensemble() const {
    GcEnsemble e(gc_spike_bin.size());
    for (std::size_t j = 0; j < gc_spike_bin.size(); ++j)
      if (gc_spike_bin[j] != kSilent) e.set(j);
    return e;
  }
};

struct Classification {
  int label = kNoneOfTheAbove;
  std::size_t distance = 0;
  /// Runner-up distance minus best distance; 0 with fewer than two trained classes.
  std::size_t margin = 0;
};

inline void validate_config(const NetworkConfig& c, const StdpParams& s) {
  if (c.columns == 0 || c.sensors == 0 || c.gcs_per_sensor == 0) throw InvalidArgument("network: empty population");
  if (c.gamma_steps < 2) throw InvalidArgument("network: gamma_steps must be >= 2");
  if (c.training_cycles < 1) throw InvalidArgument("network: training_cycles must be >= 1");
  for (const auto* r : {&c.mc_threshold, &c.gc_threshold, &c.connection_density}) {
    if (r->lo > r->hi) throw InvalidArgument("network: inverted parameter range");
  }
  if (c.connection_density.lo <= 0.0 || c.connection_density.hi > 1.0) {
    throw InvalidArgument("network: connection density must lie in (0,1]");
  }
  if (!(s.a_p > 0 && s.a_m > 0 && s.tau_p > 0 && s.tau_m > 0 && s.w_scale > 0 && s.w_mean > 0)) {
    throw InvalidArgument("network: STDP parameters must be positive");
  }
  if (!(s.w_max_spread >= 0.0 && s.w_max_spread < 1.0)) throw InvalidArgument("network: w_max spread must be in [0,1)");
  if (!(s.w_init_fraction > 0.0)) throw InvalidArgument("network: initial weight fraction must be positive");
}

inline EplNetwork instantiate(const NetworkConfig& config, const StdpParams& stdp) {
  validate_config(config, stdp);
  EplNetwork net;
  net.config = config;
  net.stdp = stdp;
  const std::size_t mcs = config.columns;
  const std::size_t gcs = config.gc_count();
  const bool het = config.heterogeneity_enabled;
  Rng rng(derive_seed(config.seed, 0xe91));
  auto draw = [&](const Range& r) { return het ? uniform(rng, r.lo, r.hi) : r.midpoint(); };

  net.mc_thresholds.resize(mcs);
  for (auto& t : net.mc_thresholds) t = draw(config.mc_threshold);

  net.connectivity.assign(mcs * gcs, 0);
  net.gc_thresholds.resize(gcs);
  for (std::size_t j = 0; j < gcs; ++j) {
    std::bernoulli_distribution edge(draw(config.connection_density));
    std::size_t in_degree = 0;
    while (in_degree == 0) {
      for (std::size_t i = 0; i < mcs; ++i) {
        const bool on = edge(rng);
        net.connectivity[i * gcs + j] = on;
        in_degree += on;
      }
    }
    net.gc_thresholds[j] = draw(config.gc_threshold) * static_cast<double>(in_degree);
  }

  const Range wmax_range{stdp.w_mean * (1.0 - stdp.w_max_spread), stdp.w_mean * (1.0 + stdp.w_max_spread)};
  net.w_max.assign(mcs * gcs, 0.0);
  net.weights.assign(mcs * gcs, 0.0);
  for (std::size_t k = 0; k < mcs * gcs; ++k) {
    if (!net.connectivity[k]) continue;
    net.w_max[k] = het && stdp.w_max_spread > 0.0 ? uniform(rng, wmax_range.lo, wmax_range.hi) : stdp.w_mean;
    net.weights[k] = std::min(stdp.w_init_fraction * stdp.w_mean, net.w_max[k]);
  }
  return net;
}

/// Copy with every connected weight set to w_mean, independent of learning history.
inline EplNetwork probe(const EplNetwork& net) {
  EplNetwork p = net;
  for (std::size_t k = 0; k < p.weights.size(); ++k) p.weights[k] = p.connectivity[k] ? p.stdp.w_mean : 0.0;
  p.learned_ensembles.clear();
  return p;
}

inline int phase_bin(double x, int gamma_steps) {
  const double c = std::clamp(x, 0.0, 1.0);
  return static_cast<int>(std::lround(static_cast<double>(gamma_steps - 1) * (1.0 - c)));
}

/// Supra-threshold MCs spike once; stronger input -> earlier bin.
inline SpikePhases encode_phases(std::span<const double> x, const EplNetwork& net) {
  check_dimension(x.size(), net.mc_count(), "encode_phases");
  SpikePhases bins(x.size(), kSilent);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > net.mc_thresholds[i]) bins[i] = phase_bin(x[i], net.config.gamma_steps);
  return bins;
}

/// One gamma cycle. MC spikes are delivered bin by bin (MC index order within a bin); a GC
/// fires once, at the first bin whose end finds its accumulated drive >= threshold.
inline CycleResult simulate_cycle(const SpikePhases& phases, const EplNetwork& net) {
  check_dimension(phases.size(), net.mc_count(), "simulate_cycle");
  const std::size_t gcs = net.gc_count();
  const int steps = net.config.gamma_steps;

  std::vector<std::vector<std::size_t>> by_bin(static_cast<std::size_t>(steps));
  for (std::size_t i = 0; i < phases.size(); ++i)
    if (phases[i] != kSilent) by_bin.at(static_cast<std::size_t>(phases[i])).push_back(i);

  CycleResult out;
  out.gc_spike_bin.assign(gcs, kSilent);
  Vector drive(gcs, 0.0);
  for (int t = 0; t < steps; ++t) {
    const auto& arrivals = by_bin[static_cast<std::size_t>(t)];
    if (arrivals.empty()) continue;
    for (const auto i : arrivals) {
      const double* row = net.weights.data() + i * gcs;
      for (std::size_t j = 0; j < gcs; ++j) drive[j] += row[j];
    }
    for (std::size_t j = 0; j < gcs; ++j)
      if (out.gc_spike_bin[j] == kSilent && drive[j] >= net.gc_thresholds[j]) out.gc_spike_bin[j] = t;
  }
  return out;
}

inline GcEnsemble gc_forward(const SpikePhases& phases, const EplNetwork& net) {
  return simulate_cycle(phases, net).ensemble();
}

/// Applies the hSTDP rule for one cycle's spike pattern. Returns the cycle it learned from.
inline CycleResult train_sample(EplNetwork& net, const SpikePhases& phases) {
  auto cycle = simulate_cycle(phases, net);
  const auto& p = net.stdp;
  const std::size_t gcs = net.gc_count();
  for (std::size_t j = 0; j < gcs; ++j) {
    const int t_gc = cycle.gc_spike_bin[j];
    if (t_gc == kSilent) continue;
    for (std::size_t i = 0; i < net.mc_count(); ++i) {
      const std::size_t k = i * gcs + j;
      if (!net.connectivity[k]) continue;
      double w = net.weights[k];
      if (phases[i] == kSilent) {
        w -= p.w_scale * p.a_m;
      } else {
        const double dt = static_cast<double>(t_gc - phases[i]);
        if (dt >= 0.0) w += p.w_scale * p.a_p * std::exp(-dt / p.tau_p);
        else w -= p.w_scale * p.a_m * std::exp(dt / p.tau_m);
      }
      net.weights[k] = std::clamp(w, 0.0, net.w_max[k]);
    }
  }
  return cycle;
}

/// Trains one class from its shots (online: each class exactly once) and stores its
/// ensemble: GCs active for at least half the shots in a post-training pass.
inline void learn_class(EplNetwork& net, std::span<const Vector> shots, int class_id) {
  if (shots.empty()) throw InvalidArgument("learn_class: no shots");
  if (class_id < 0) throw InvalidArgument("learn_class: class ids must be non-negative");
  if (net.learned_ensembles.count(class_id)) {
    throw InvalidArgument("learn_class: class " + std::to_string(class_id) + " already trained");
  }
  std::vector<SpikePhases> phases;
  for (const auto& x : shots) phases.push_back(encode_phases(x, net));
  for (const auto& ph : phases)
    for (int c = 0; c < net.config.training_cycles; ++c) train_sample(net, ph);

  std::vector<std::size_t> votes(net.gc_count(), 0);
  for (const auto& ph : phases) {
    const auto cycle = simulate_cycle(ph, net);
    for (std::size_t j = 0; j < votes.size(); ++j) votes[j] += cycle.gc_spike_bin[j] != kSilent;
  }
  GcEnsemble e(net.gc_count());
  for (std::size_t j = 0; j < votes.size(); ++j)
    if (2 * votes[j] >= phases.size()) e.set(j);
  net.learned_ensembles.emplace(class_id, std::move(e));
}

/// Nearest stored ensemble by Hamming distance (ties -> lowest class id); rejected as
/// none-of-the-above when nothing is trained or the best distance exceeds
/// threshold_fraction * |GC|.
inline Classification classify_ensemble(const EplNetwork& net, const GcEnsemble& test, double threshold_fraction) {
  Classification out;
  out.distance = net.gc_count();
  if (net.learned_ensembles.empty()) return out;
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::size_t second = best;
  int best_label = kNoneOfTheAbove;
  for (const auto& [label, stored] : net.learned_ensembles) {
    const auto d = hamming(test, stored);
    if (d < best) {
      second = best;
      best = d;
      best_label = label;
    } else if (d < second) {
      second = d;
    }
  }
  out.distance = best;
  out.margin = second == std::numeric_limits<std::size_t>::max() ? 0 : second - best;
  const double limit = threshold_fraction * static_cast<double>(net.gc_count());
  out.label = static_cast<double>(best) > limit ? kNoneOfTheAbove : best_label;
  return out;
}

inline Classification classify(const EplNetwork& net, std::span<const double> x, double threshold_fraction) {
  return classify_ensemble(net, gc_forward(encode_phases(x, net), net), threshold_fraction);
}

inline std::vector<std::size_t> recruitment_counts(const EplNetwork& net, std::span<const Vector> samples) {
  if (samples.empty()) throw InvalidArgument("recruitment_counts: no samples");
  std::vector<std::size_t> counts(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) {
    counts[s] = gc_forward(encode_phases(samples[s], net), net).spike_count();
  });
  return counts;
}

/// FNV-1a over the weight bytes; cheap fingerprint for "weights untouched" assertions.
inline std::uint64_t weights_digest(const EplNetwork& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const double w : net.weights) {
    const auto bits = std::bit_cast<std::uint64_t>(w);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Serialization ----------------------------------------------------------------

inline constexpr int kNetworkSnapshotVersion = 1;

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"columns", c.columns}, {"sensors", c.sensors}, {"gcs_per_sensor", c.gcs_per_sensor},
       {"gamma_steps", c.gamma_steps}, {"training_cycles", c.training_cycles},
       {"mc_threshold", c.mc_threshold}, {"gc_threshold", c.gc_threshold},
       {"connection_density", c.connection_density}, {"heterogeneity_enabled", c.heterogeneity_enabled},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  j.at("columns").get_to(c.columns);
  j.at("sensors").get_to(c.sensors);
  j.at("gcs_per_sensor").get_to(c.gcs_per_sensor);
  j.at("gamma_steps").get_to(c.gamma_steps);
  j.at("training_cycles").get_to(c.training_cycles);
  j.at("mc_threshold").get_to(c.mc_threshold);
  j.at("gc_threshold").get_to(c.gc_threshold);
  j.at("connection_density").get_to(c.connection_density);
  j.at("heterogeneity_enabled").get_to(c.heterogeneity_enabled);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const StdpParams& s) {
  j = {{"a_p", s.a_p}, {"a_m", s.a_m}, {"tau_p", s.tau_p}, {"tau_m", s.tau_m},
       {"w_scale", s.w_scale}, {"w_mean", s.w_mean}, {"w_max_spread", s.w_max_spread},
       {"w_init_fraction", s.w_init_fraction}};
}
inline void from_json(const nlohmann::json& j, StdpParams& s) {
  j.at("a_p").get_to(s.a_p);
  j.at("a_m").get_to(s.a_m);
  j.at("tau_p").get_to(s.tau_p);
  j.at("tau_m").get_to(s.tau_m);
  j.at("w_scale").get_to(s.w_scale);
  j.at("w_mean").get_to(s.w_mean);
  j.at("w_max_spread").get_to(s.w_max_spread);
  j.at("w_init_fraction").get_to(s.w_init_fraction);
}

inline void to_json(nlohmann::json& j, const EplNetwork& net) {
  nlohmann::json ensembles = nlohmann::json::object();
  for (const auto& [label, e] : net.learned_ensembles) {
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < e.size(); ++k)
      if (e.test(k)) active.push_back(k);
    ensembles[std::to_string(label)] = active;
  }
  j = {{"format", "eplff-network"}, {"version", kNetworkSnapshotVersion},
       {"config", net.config}, {"stdp", net.stdp},
       {"mc_thresholds", net.mc_thresholds}, {"gc_thresholds", net.gc_thresholds},
       {"connectivity", net.connectivity}, {"w_max", net.w_max}, {"weights", net.weights},
       {"learned_ensembles", ensembles}};
}

inline void from_json(const nlohmann::json& j, EplNetwork& net) {
  if (j.at("format") != "eplff-network" || j.at("version").get<int>() != kNetworkSnapshotVersion) {
    throw SchemaError("unsupported network snapshot");
  }
  j.at("config").get_to(net.config);
  j.at("stdp").get_to(net.stdp);
  j.at("mc_thresholds").get_to(net.mc_thresholds);
  j.at("gc_thresholds").get_to(net.gc_thresholds);
  j.at("connectivity").get_to(net.connectivity);
  j.at("w_max").get_to(net.w_max);
  j.at("weights").get_to(net.weights);
  const std::size_t cells = net.mc_count() * net.gc_count();
  if (net.connectivity.size() != cells || net.w_max.size() != cells || net.weights.size() != cells) {
    throw SchemaError("network snapshot: matrix size mismatch");
  }
  net.learned_ensembles.clear();
  for (const auto& [key, active] : j.at("learned_ensembles").items()) {
    GcEnsemble e(net.gc_count());
    for (const auto k : active.get<std::vector<std::size_t>>()) e.set(k);
    net.learned_ensembles.emplace(std::stoi(key), std::move(e));
  }
}

} // namespace eplff::network
