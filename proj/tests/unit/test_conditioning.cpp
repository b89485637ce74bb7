#include "eplff/conditioning.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

using namespace eplff;
using namespace eplff::conditioning;
using eplff::oracles::gp_oracle;

namespace {

ScalingParams params(Vector max, Vector v_uni) {
  ScalingParams p;
  p.per_sensor_max = std::move(max);
  p.v_uni = std::move(v_uni);
  return p;
}

} // namespace

TEST_CASE("g_p reference values") {
  CHECK(goodness_of_preprocessing(std::vector<std::size_t>{5, 5, 5, 5}) == 1.0);
  CHECK(goodness_of_preprocessing(std::vector<std::size_t>{0, 10, 10}) == 0.0);
  CHECK(goodness_of_preprocessing(std::vector<std::size_t>{5, 10}) == 0.75);
  CHECK(goodness_of_preprocessing(std::vector<std::size_t>{0, 0}) == 0.0);
  CHECK_THROWS_AS(goodness_of_preprocessing(std::vector<std::size_t>{}), InvalidArgument);
}

TEST_CASE("g_p matches the direct-formula oracle on random vectors") {
  Rng rng(12345);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::uniform_int_distribution<std::size_t> count(0, 5000);
  std::bernoulli_distribution zero(0.05);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> v(len(rng));
    for (auto& c : v) c = zero(rng) ? 0 : count(rng);
    const double gp = goodness_of_preprocessing(v);
    REQUIRE(gp == gp_oracle(v));
    REQUIRE(gp >= 0.0);
    REQUIRE(gp <= 1.0);
  }
}

TEST_CASE("g_p equals one exactly when all counts are equal and positive") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 1 + rng() % 1000;
    std::vector<std::size_t> v(1 + rng() % 20, c);
    CHECK(goodness_of_preprocessing(v) == 1.0);
    v[rng() % v.size()] += 1;
    if (v.size() > 1) CHECK(goodness_of_preprocessing(v) < 1.0);
  }
}

TEST_CASE("fit_scaling takes per-sensor maxima") {
  const std::vector<Vector> val{{2, 4}, {1, 8}};
  const auto p = fit_scaling(val, 1);
  CHECK(p.per_sensor_max == Vector{2, 8});
  CHECK(fit_scaling(std::vector<Vector>{{3, 3}}, 1).per_sensor_max == Vector{3, 3});
  CHECK(fit_scaling(val, 9).v_uni == fit_scaling(val, 9).v_uni);
  for (const auto v : fit_scaling(val, 9).v_uni) {
    CHECK(v >= 0.5);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("fit_scaling floors and flags constant-zero sensors") {
  const auto p = fit_scaling(std::vector<Vector>{{0, 1}, {0, 2}}, 1);
  CHECK(p.per_sensor_max[0] == 1e-9);
  CHECK(p.flagged == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(fit_scaling(std::vector<Vector>{}, 1), InvalidArgument);
}

TEST_CASE("apply_scaling arithmetic") {
  CHECK(apply_scaling(Vector{2, 8}, params({2, 8}, {1, 1})) == Vector{1, 1});
  CHECK(apply_scaling(Vector{1, 2}, params({2, 4}, {1.0, 0.5})) == Vector{0.5, 0.25});
  CHECK(apply_scaling(Vector{4, 8}, params({2, 8}, {1, 1})) == Vector{2, 1});
  CHECK_THROWS_AS(apply_scaling(Vector{1}, params({2, 8}, {1, 1})), InvalidArgument);
}

TEST_CASE("normalize_intensity arithmetic and fixed point") {
  const auto out = normalize_intensity(Vector{0.2, 0.4, 0.6}, {0.2, 1e-9});
  REQUIRE(out.size() == 3);
  CHECK(out[0] == Catch::Approx(0.1).epsilon(1e-15));
  CHECK(out[1] == Catch::Approx(0.2).epsilon(1e-15));
  CHECK(out[2] == Catch::Approx(0.3).epsilon(1e-15));
  const Vector fixed{0.25, 0.5, 0.15};
  CHECK(normalize_intensity(fixed, {0.3, 1e-9}) == fixed);
  const Vector zeros(4, 0.0);
  CHECK(normalize_intensity(zeros, {}) == zeros);
  CHECK(below_normalization_floor(zeros, {}));
}

TEST_CASE("normalize_intensity is scale invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    Vector x(16);
    for (auto& v : x) v = uniform(rng, 0.0, 5.0);
    const auto base = normalize_intensity(x, {});
    // powers of two scale exactly in binary floating point
    for (const double c : {0.25, 0.5, 2.0, 8.0}) {
      Vector y = x;
      for (auto& v : y) v *= c;
      REQUIRE(normalize_intensity(y, {}) == base);
    }
    const double c = uniform(rng, 0.1, 10.0);
    Vector y = x;
    for (auto& v : y) v *= c;
    const auto scaled = normalize_intensity(y, {});
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(scaled[i] == Catch::Approx(base[i]).epsilon(1e-13));
    REQUIRE(mean(base) == Catch::Approx(0.3).epsilon(1e-13));
  }
}

TEST_CASE("scaling and duplication are linear") {
  Rng rng(5);
  const auto dup = instantiate_duplication(6, {}, 17);
  const auto sp = params(Vector(6, 3.0), Vector{0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
  for (int trial = 0; trial < 200; ++trial) {
    Vector x(6);
    for (auto& v : x) v = uniform(rng, 0.0, 2.0);
    const double a = uniform(rng, 0.1, 4.0);
    Vector ax = x;
    for (auto& v : ax) v *= a;
    const auto s1 = apply_scaling(ax, sp), s0 = apply_scaling(x, sp);
    const auto d1 = apply_duplication(ax, dup), d0 = apply_duplication(x, dup);
    for (std::size_t i = 0; i < s0.size(); ++i) REQUIRE(s1[i] == Catch::Approx(a * s0[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < d0.size(); ++i) REQUIRE(d1[i] == Catch::Approx(a * d0[i]).epsilon(1e-13));
  }
}

TEST_CASE("duplication structure") {
  SECTION("dimensions") {
    const auto cfg = instantiate_duplication(16, {}, 1);
    CHECK(cfg.output_dimension() == 80);
    CHECK(apply_duplication(Vector(16, 1.0), cfg).size() == 80);
  }
  SECTION("no principal input is isolated for any seed") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      DuplicationOptions o;
      o.density = 0.2;
      const auto cfg = instantiate_duplication(4, o, seed);
      for (const auto& inputs : cfg.projection) {
        REQUIRE_FALSE(inputs.empty());
        for (const auto j : inputs) REQUIRE(j < o.m);
      }
    }
  }
  SECTION("density one connects every interneuron in the column") {
    DuplicationOptions o;
    o.density = 1.0;
    const auto cfg = instantiate_duplication(3, o, 2);
    for (const auto& inputs : cfg.projection) CHECK(inputs.size() == o.m);
  }
  SECTION("single path passthrough") {
    DuplicationConfig cfg;
    cfg.sensors = 1;
    cfg.m = cfg.n = 1;
    cfg.gains = {0.7};
    cfg.projection = {{0}};
    CHECK(apply_duplication(Vector{1.0}, cfg) == Vector{0.7});
  }
  SECTION("zero input column stays zero") {
    const auto cfg = instantiate_duplication(2, {}, 4);
    const auto y = apply_duplication(Vector{1.0, 0.0}, cfg);
    for (std::size_t i = cfg.n; i < 2 * cfg.n; ++i) CHECK(y[i] == 0.0);
  }
  SECTION("column mean matches the analytic expectation at full density") {
    DuplicationOptions o;
    o.density = 1.0;
    const auto cfg = instantiate_duplication(3, o, 8);
    const Vector x{0.4, 1.3, 2.0};
    const auto y = apply_duplication(x, cfg);
    for (std::size_t s = 0; s < 3; ++s) {
      double gain_mean = 0.0;
      for (std::size_t j = 0; j < o.m; ++j) gain_mean += cfg.gains[s * o.m + j];
      gain_mean /= static_cast<double>(o.m);
      for (std::size_t i = 0; i < o.n; ++i) CHECK(y[s * o.n + i] == Catch::Approx(x[s] * gain_mean).epsilon(1e-14));
    }
  }
  SECTION("homogeneous gains collapse to the midpoint") {
    DuplicationOptions o;
    o.heterogeneous = false;
    const auto cfg = instantiate_duplication(3, o, 8);
    for (const auto g : cfg.gains) CHECK(g == 1.0);
  }
  SECTION("invalid options") {
    DuplicationOptions o;
    o.gain_lo = 2.0;
    CHECK_THROWS_AS(instantiate_duplication(2, o, 1), InvalidArgument);
    o = {};
    o.density = 0.0;
    CHECK_THROWS_AS(instantiate_duplication(2, o, 1), InvalidArgument);
    o = {};
    o.m = 0;
    CHECK_THROWS_AS(instantiate_duplication(2, o, 1), InvalidArgument);
  }
}

TEST_CASE("condition composes the stages in order") {
  const std::vector<Vector> val{{1, 2, 3}, {3, 1, 0.5}};
  ConditioningOptions opts;
  opts.scaling.raw_fallback_scale = 5e-5;
  const auto st = make_conditioning(val, 3, opts, 21);
  const Vector x{2, 2, 2};
  const auto raw = condition(x, Stage::raw, st);
  for (const auto v : raw) CHECK(v == 2 * 5e-5);
  const auto scaled = condition(x, Stage::scaled, st);
  CHECK(scaled == apply_scaling(x, st.scaling));
  const auto normalized = condition(x, Stage::normalized, st);
  CHECK(normalized == normalize_intensity(scaled, st.normalization));
  CHECK(condition(x, Stage::duplicated, st) == apply_duplication(normalized, st.duplication));
  CHECK(st.output_dimension(Stage::duplicated) == 15);
  CHECK(st.output_dimension(Stage::normalized) == 3);
  CHECK_THROWS_AS(condition(Vector{1, 2}, Stage::scaled, st), InvalidArgument);
}

TEST_CASE("known range scaling ignores validation") {
  ConditioningOptions opts;
  opts.known_range = 2.0;
  const auto st = make_conditioning(std::vector<Vector>{{0.1, 0.1}}, 2, opts, 3);
  CHECK(st.scaling.per_sensor_max == Vector{2.0, 2.0});
}

TEST_CASE("conditioning state round-trips through JSON exactly") {
  Rng rng(1);
  std::vector<Vector> val(10, Vector(16));
  for (auto& v : val)
    for (auto& x : v) x = uniform(rng, 0.0, 1e4);
  const auto st = make_conditioning(val, 16, {}, 0xfeed);
  const auto text = nlohmann::json(st).dump();
  const auto back = nlohmann::json::parse(text).get<ConditioningState>();
  CHECK(back == st);
  CHECK(nlohmann::json(back).dump() == text);
  CHECK(nlohmann::json(make_conditioning(val, 16, {}, 0xfeed)).dump() == text);
  auto bad = nlohmann::json(st);
  bad["version"] = 99;
  CHECK_THROWS_AS(bad.get<ConditioningState>(), SchemaError);
}

TEST_CASE("stage names round-trip") {
  for (const auto s : kAllStages) CHECK(stage_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(stage_from_string("bogus"), InvalidArgument);
}
