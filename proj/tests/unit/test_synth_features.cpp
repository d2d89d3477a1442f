#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <queue>

#include "mgf/feature_row.hpp"
#include "mgf/features/features.hpp"
#include "mgf/synth/synth.hpp"

using namespace mgf;
using namespace mgf::features;

namespace {

// Stripes sit at period/2 + k*period so the single centred vertical test line misses them all.
BinaryMask vertical_stripes(std::size_t h, std::size_t w, std::size_t period) {
  BinaryMask m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = period / 2; c < w; c += period) m(r, c) = 1;
  return m;
}

BinaryMask disc(std::size_t n, double cr, double cc, double radius) {
  BinaryMask m(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (std::hypot(r - cr, c - cc) <= radius) m(r, c) = 1;
  return m;
}

std::size_t four_connected_background(const BinaryMask& m) {
  Grid<int> seen(m.height(), m.width(), 0);
  std::size_t regions = 0;
  for (std::size_t r0 = 0; r0 < m.height(); ++r0)
    for (std::size_t c0 = 0; c0 < m.width(); ++c0) {
      if (m(r0, c0) || seen(r0, c0)) continue;
      ++regions;
      std::queue<std::pair<long, long>> q;
      q.emplace(r0, c0);
      seen(r0, c0) = 1;
      while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop();
        for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          const long nr = r + dr, nc = c + dc;
          if (!m.in_bounds(nr, nc) || m.on(nr, nc)) continue;
          const auto ur = static_cast<std::size_t>(nr), uc = static_cast<std::size_t>(nc);
          if (seen(ur, uc)) continue;
          seen(ur, uc) = 1;
          q.emplace(nr, nc);
        }
      }
    }
  return regions;
}

bool has_2x2(const BinaryMask& m) {
  for (std::size_t r = 0; r + 1 < m.height(); ++r)
    for (std::size_t c = 0; c + 1 < m.width(); ++c)
      if (m(r, c) && m(r + 1, c) && m(r, c + 1) && m(r + 1, c + 1)) return true;
  return false;
}

synth::SynthSpec quiet_spec(std::uint64_t seed) {
  synth::SynthSpec s;
  s.seed = seed;
  s.noise_sigma = 0;
  return s;
}

}  // namespace

TEST_CASE("linear intercept") {
  for (std::size_t w : {4u, 8u, 10u, 16u}) {
    const std::size_t width = w * 12;
    BinaryMask m = vertical_stripes(40, width, w);
    const InterceptSpec spec{.n_h_lines = 5, .n_v_lines = 1};
    CHECK(linear_intercept(m, spec, 1.0) == doctest::Approx(static_cast<double>(w)));
    CHECK(linear_intercept(m, spec, 2.0) == doctest::Approx(2.0 * w));
  }

  BinaryMask four(1, 100);
  for (std::size_t c : {10u, 30u, 55u, 80u}) four(0, c) = 1;
  auto d = linear_intercept_detail(four, {.n_h_lines = 1, .n_v_lines = 1}, 1.0);
  CHECK(d.crossings == 4);
  CHECK(d.mean_size_um == doctest::Approx(25.0));

  // A three-pixel-thick run counts once.
  BinaryMask thick(1, 100);
  for (std::size_t c : {10u, 11u, 12u, 60u}) thick(0, c) = 1;
  CHECK(linear_intercept_detail(thick, {.n_h_lines = 1, .n_v_lines = 1}, 1.0).crossings == 2);

  CHECK_THROWS_AS(linear_intercept(BinaryMask(50, 50), {}, 1.0), MeasurementUndefined);
}

TEST_CASE("area fraction and ecd") {
  BinaryMask m(10, 10);
  CHECK(area_fraction(m) == 0.0);
  for (std::size_t i = 0; i < 25; ++i) m[i * 4] = 1;
  CHECK(area_fraction(m) == 0.25);
  BinaryMask rot(10, 10);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 10; ++c) rot(c, 9 - r) = m(r, c);
  CHECK(area_fraction(rot) == area_fraction(m));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 1;
  CHECK(area_fraction(m) == 1.0);

  CHECK(std::abs(ecd(std::numbers::pi, 1.0) - 2.0) < 1e-12);
  CHECK(ecd(100.0, 1.0) == doctest::Approx(11.2838).epsilon(1e-5));
  CHECK(ecd(0.0, 1.0) == 0.0);
  CHECK(ecd(25.0, 2.0) == doctest::Approx(ecd(100.0, 1.0)));
  CHECK_THROWS_AS(ecd(-1.0, 1.0), std::invalid_argument);
  double prev = -1;
  for (double a = 0; a < 500; a += 7.3) {
    CHECK(ecd(a, 1.0) > prev);
    CHECK(ecd(4 * a, 1.0) == doctest::Approx(2 * ecd(a, 1.0)));
    prev = ecd(a, 1.0);
  }
}

TEST_CASE("particle stats") {
  auto stats = phase_particle_stats(disc(41, 20, 20, 10), 1.0);
  CHECK(stats.particle_count == 1);
  CHECK(std::abs(stats.mean_ecd_um - 20.0) / 20.0 < 0.03);

  BinaryMask sq(30, 30);
  for (std::size_t r = 2; r < 7; ++r)
    for (std::size_t c = 2; c < 7; ++c) sq(r, c) = sq(r + 15, c + 10) = 1;
  auto two = phase_particle_stats(sq, 1.0);
  CHECK(two.particle_count == 2);
  CHECK(two.mean_area_um2 == 25.0);
  CHECK(two.mean_ecd_um == doctest::Approx(ecd(25.0, 1.0)));

  auto none = phase_particle_stats(BinaryMask(8, 8), 1.0);
  CHECK(none.particle_count == 0);
  CHECK(none.mean_area_um2 == 0.0);
  CHECK(none.mean_ecd_um == 0.0);

  BinaryMask edge(10, 10);
  edge(0, 0) = edge(5, 5) = 1;
  CHECK(phase_particle_stats(edge, 1.0).particle_count == 2);
  CHECK(phase_particle_stats(edge, 1.0, true).particle_count == 1);
}

TEST_CASE("synthetic micrographs") {
  auto a = synth::generate(quiet_spec(3));
  auto b = synth::generate(quiet_spec(3));
  CHECK(a.image == b.image);
  CHECK(a.truth.boundary == b.truth.boundary);
  CHECK(a.truth.phase == b.truth.phase);
  CHECK_FALSE(synth::generate(quiet_spec(4)).image == a.image);

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s = synth::generate(quiet_spec(seed));
    const auto& gt = s.truth;
    const double n = static_cast<double>(gt.boundary.size());

    double area = 0, tolerance = 0;
    for (const auto& e : gt.particles) {
      area += e.area();
      tolerance += std::numbers::pi * (3 * (e.a + e.b) - std::sqrt((3 * e.a + e.b) * (e.a + 3 * e.b)));
    }
    CHECK(gt.true_phase_fraction == doctest::Approx(area / n));
    CHECK(std::abs(static_cast<double>(gt.phase.count()) - area) <= tolerance);

    CHECK_FALSE(has_2x2(gt.boundary));
    // Each Voronoi cell is one 4-connected region enclosed by the boundary.
    CHECK(four_connected_background(gt.boundary) == 30);

    // Without erased segments the measured intercept matches the analytic one.
    const double measured = linear_intercept(gt.boundary, {}, 1.0);
    CHECK(std::abs(measured - gt.true_intercept_um) / gt.true_intercept_um < 0.05);
  }

  auto weak = quiet_spec(2);
  weak.weak_boundary_fraction = 0.2;
  auto w = synth::generate(weak);
  CHECK(w.truth.weak_segments.size() ==
        static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(w.truth.segment_count))));
  CHECK(w.truth.boundary == synth::generate(quiet_spec(2)).truth.boundary);

  synth::SynthSpec crowded;
  crowded.height = crowded.width = 32;
  crowded.particle_count = 400;
  CHECK_THROWS_AS(synth::generate(crowded), std::runtime_error);
}

TEST_CASE("assemble features") {
  // Grain count picked so a 256 px frame at 0.5 um/px gives roughly 40 um intercepts.
  synth::SynthSpec spec = quiet_spec(7);
  spec.n_grains = 8;
  spec.pixel_scale_um = 0.5;
  auto s = synth::generate(spec);
  CHECK(s.truth.true_intercept_um == doctest::Approx(40).epsilon(0.25));
  auto row = assemble_features("x", 1.5, s.truth.boundary, s.truth.phase, spec.pixel_scale_um);
  CHECK(std::abs(row.grain_size_um - s.truth.true_intercept_um) / s.truth.true_intercept_um < 0.10);
  CHECK(row.phase_area_fraction == area_fraction(s.truth.phase));
  CHECK(row.gd_at_pct == 1.5);
  CHECK_FALSE(row.hv.has_value());
  CHECK(assemble_features("y", 1.5, s.truth.boundary, s.truth.phase, 0.5, 60.0).hv == 60.0);
}

TEST_CASE("hardness law and feature tables") {
  FeatureRow r{"", 0.31, 60, 0.01, 3, {}};
  const double expected = 25 + 18 * 0.31 + 30 / std::sqrt(60.0) + 40 * 0.01 + 0.5 * 3;
  CHECK(synth::law_hv(synth::Law::hall_petch, r) == doctest::Approx(expected));
  CHECK(synth::law_hv(synth::Law::hall_petch, r) == doctest::Approx(36.35).epsilon(1e-3));

  auto t1 = synth::generate_feature_table(21, synth::Law::hall_petch, 1.0, 5);
  auto t2 = synth::generate_feature_table(21, synth::Law::hall_petch, 1.0, 5);
  REQUIRE(t1.size() == 21);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].hv == t2[i].hv);
    CHECK(t1[i].gd_at_pct >= 0.08);
    CHECK(t1[i].gd_at_pct <= 2.9);
    CHECK(t1[i].grain_size_um >= 40);
    CHECK(t1[i].grain_size_um <= 100);
  }
  auto exact = synth::generate_feature_table(10, synth::Law::linear, 0.0, 5);
  for (const auto& row : exact) CHECK(*row.hv == synth::law_hv(synth::Law::linear, row));
  CHECK_THROWS(synth::generate_feature_table(2, synth::Law::linear, 0.0, 5));
}

TEST_CASE("feature csv round trip") {
  auto rows = synth::generate_feature_table(6, synth::Law::hall_petch, 2.0, 9);
  rows[2].hv.reset();
  const auto path = std::filesystem::temp_directory_path() / "mgf_features_rt.csv";
  write_feature_csv(path, rows);
  auto back = read_feature_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].id == rows[i].id);
    for (std::size_t f = 0; f < FeatureRow::kFeatures; ++f) CHECK(back[i].feature(f) == rows[i].feature(f));
    CHECK(back[i].hv == rows[i].hv);
  }
  std::filesystem::remove(path);
}
