#include <algorithm>
#include <set>

#include "doctest.h"
#include "mgf/edge/metrics.hpp"
#include "mgf/repair/repair.hpp"
#include "mgf/rng.hpp"
#include "mgf/synth/synth.hpp"

using namespace mgf;
using namespace mgf::repair;

namespace {

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p;
  return m;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

bool has_2x2(const BinaryMask& m) {
  for (std::size_t r = 0; r + 1 < m.height(); ++r)
    for (std::size_t c = 0; c + 1 < m.width(); ++c)
      if (m(r, c) && m(r + 1, c) && m(r, c + 1) && m(r + 1, c + 1)) return true;
  return false;
}

// 4-connected background components that do not touch the image border.
std::size_t enclosed_background_components(const BinaryMask& m) {
  const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  std::vector<int> seen(m.size(), 0);
  std::size_t count = 0;
  for (long r0 = 0; r0 < h; ++r0)
    for (long c0 = 0; c0 < w; ++c0) {
      const std::size_t s = static_cast<std::size_t>(r0 * w + c0);
      if (m[s] || seen[s]) continue;
      bool touches = false;
      std::vector<std::pair<long, long>> st{{r0, c0}};
      seen[s] = 1;
      while (!st.empty()) {
        auto [r, c] = st.back();
        st.pop_back();
        if (r == 0 || c == 0 || r == h - 1 || c == w - 1) touches = true;
        const long dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const long rr = r + dr[k], cc = c + dc[k];
          if (!m.in_bounds(rr, cc)) continue;
          const std::size_t q = static_cast<std::size_t>(rr * w + cc);
          if (m[q] || seen[q]) continue;
          seen[q] = 1;
          st.emplace_back(rr, cc);
        }
      }
      if (!touches) ++count;
    }
  return count;
}

ProbMap as_prob(const BinaryMask& m) {
  ProbMap p(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i];
  return p;
}

}  // namespace

TEST_CASE("gradient_mask: constant and step images") {
  CHECK(gradient_mask(GrayImage(10, 10, 0.4)).count() == 0);
  GrayImage step(10, 12, 0.2);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 6; c < 12; ++c) step(r, c) = 0.8;
  BinaryMask m = gradient_mask(step);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 12; ++c) CHECK(static_cast<bool>(m(r, c)) == (c == 5 || c == 6));
}

TEST_CASE("otsu: bimodal values split between the modes; matches an exhaustive scan") {
  std::vector<double> v(500, 0.1);
  v.insert(v.end(), 300, 0.9);
  const double t = otsu_threshold(v);
  CHECK(t > 0.1);
  CHECK(t < 0.9);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x;
    for (int i = 0; i < 200; ++i) x.push_back(rng.uniform() < 0.6 ? rng.normal(0.3, 0.05) : rng.normal(0.7, 0.08));
    const double got = otsu_threshold(x, 64);
    // Exhaustive scan over the same 64 bin edges, scoring on the raw values.
    const double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
    double best = -1, best_t = 0;
    for (int b = 1; b < 64; ++b) {
      const double cut = lo + (hi - lo) * b / 64.0;
      double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
      for (double y : x) {
        // Bin of y as the histogram assigns it.
        const int bin = std::min(63, static_cast<int>((y - lo) / ((hi - lo) / 64.0)));
        if (bin < b) { n0 += 1; s0 += bin; } else { n1 += 1; s1 += bin; }
      }
      if (n0 == 0 || n1 == 0) continue;
      const double d = s0 / n0 - s1 / n1, score = n0 * n1 * d * d;
      if (score > best) { best = score; best_t = cut; }
    }
    CHECK(got == doctest::Approx(best_t).epsilon(1e-12));
  }
}

TEST_CASE("combine: union semantics") {
  Rng rng(5);
  ProbMap p(6, 6);
  for (double& v : p.data()) v = rng.uniform();
  const BinaryMask none(6, 6);
  CHECK(combine(p, none) == p.threshold(0.5));
  CHECK(combine(ProbMap(6, 6, 0.0), random_mask(rng, 6, 6, 0.3)).count() > 0);
  BinaryMask m = random_mask(rng, 6, 6, 0.4);
  CHECK(combine(ProbMap(6, 6, 0.0), m) == m);
  const BinaryMask a = p.threshold(0.5);
  CHECK(combine(p, m).count() == a.count() + m.count() - intersection_count(a, m));
  CHECK_THROWS_AS(combine(p, BinaryMask(5, 6)), std::invalid_argument);
}

TEST_CASE("trace_contours: square, frame, rectangle area") {
  BinaryMask sq(14, 14);
  for (std::size_t r = 2; r < 12; ++r)
    for (std::size_t c = 2; c < 12; ++c) sq(r, c) = 1;
  auto cs = trace_contours(sq);
  REQUIRE(cs.size() == 1);
  CHECK_FALSE(cs[0].is_hole);
  CHECK(cs[0].parent == -1);

  BinaryMask frame = sq;
  for (std::size_t r = 3; r < 11; ++r)
    for (std::size_t c = 3; c < 11; ++c) frame(r, c) = 0;
  cs = trace_contours(frame);
  REQUIRE(cs.size() == 2);
  CHECK_FALSE(cs[0].is_hole);
  CHECK(cs[1].is_hole);
  CHECK(cs[1].parent == 0);

  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{5, 3}, {7, 9}, {1, 4}, {12, 2}}) {
    BinaryMask rect(h + 4, w + 4);
    for (std::size_t r = 2; r < h + 2; ++r)
      for (std::size_t c = 2; c < w + 2; ++c) rect(r, c) = 1;
    cs = trace_contours(rect);
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].enclosed_area_px == doctest::Approx(static_cast<double>((w - 1) * (h - 1))));
    CHECK(rect.count() == w * h);
  }
  CHECK(trace_contours(BinaryMask(5, 5)).empty());
}

TEST_CASE("trace_contours: topology and hierarchy agree with component labelling") {
  Rng rng(6);
  for (int t = 0; t < 60; ++t) {
    BinaryMask m = random_mask(rng, 16, 18, 0.3 + 0.01 * t);
    auto cs = trace_contours(m);
    const Components comp = label_components(m);
    std::size_t outers = 0, holes = 0;
    for (const Contour& c : cs) {
      for (std::size_t i = 0; i < c.pixels.size(); ++i) {
        const Point a = c.pixels[i], b = c.pixels[(i + 1) % c.pixels.size()];
        CHECK(std::max(std::labs(a.r - b.r), std::labs(a.c - b.c)) <= 1);  // 8-connected, closed
        CHECK(m.on(a.r, a.c));
      }
      if (c.is_hole) {
        ++holes;
        REQUIRE(c.parent >= 0);
        const Contour& p = cs[static_cast<std::size_t>(c.parent)];
        CHECK_FALSE(p.is_hole);
        // The hole border and its parent belong to one component.
        CHECK(comp.labels(static_cast<std::size_t>(c.pixels[0].r), static_cast<std::size_t>(c.pixels[0].c)) ==
              comp.labels(static_cast<std::size_t>(p.pixels[0].r), static_cast<std::size_t>(p.pixels[0].c)));
      } else {
        ++outers;
        CHECK(c.enclosed_area_px >= 0.0);
      }
    }
    CHECK(outers == comp.count());
    CHECK(holes == enclosed_background_components(m));
  }
}

TEST_CASE("contour area vs pixel count stays within the perimeter") {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    BinaryMask disk(30, 30);
    const double cr = rng.uniform(10, 20), cc = rng.uniform(10, 20), rad = rng.uniform(2, 9);
    for (std::size_t r = 0; r < 30; ++r)
      for (std::size_t c = 0; c < 30; ++c)
        disk(r, c) = (r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad;
    auto cs = trace_contours(disk);
    REQUIRE(cs.size() == 1);
    CHECK(std::abs(static_cast<double>(disk.count()) - cs[0].enclosed_area_px) <= static_cast<double>(cs[0].pixels.size()));
  }
}

TEST_CASE("remove_small: examples and idempotence") {
  Rng rng(8);
  BinaryMask m = random_mask(rng, 20, 20, 0.2);
  CHECK(remove_small(m, 0) == m);
  BinaryMask one(5, 5);
  one(2, 2) = 1;
  CHECK(remove_small(one, 2).count() == 0);

  BinaryMask two(20, 20);
  for (std::size_t c = 0; c < 3; ++c) two(1, c) = 1;  // 3 px
  for (std::size_t r = 5; r < 15; ++r)
    for (std::size_t c = 5; c < 10; ++c) two(r, c) = 1;  // 50 px
  BinaryMask kept = remove_small(two, 10);
  CHECK(kept.count() == 50);
  CHECK(kept(1, 0) == 0);
  CHECK(remove_small(remove_small(m, 4), 4) == remove_small(m, 4));
  CHECK_THROWS_AS(remove_small(m, -1), std::invalid_argument);
}

TEST_CASE("region_grow: examples") {
  GrayImage unique(6, 7);
  for (std::size_t i = 0; i < unique.size(); ++i) unique[i] = static_cast<double>(i) / 100.0;
  Rng rng(9);
  BinaryMask seeds = random_mask(rng, 6, 7, 0.2);
  CHECK(region_grow(seeds, unique, {.similarity_tol = 0.0}) == seeds);

  GrayImage flat(8, 8, 0.5);
  BinaryMask one(8, 8);
  one(3, 3) = 1;
  CHECK(region_grow(one, flat, {.similarity_tol = 1.0, .max_fill = 1.0}).count() == 64);
  // With the noise rule active a flooded component is dropped.
  CHECK(region_grow(one, flat, {.similarity_tol = 1.0}).count() == 0);

  GrayImage field(20, 20, 0.9);
  BinaryMask line(20, 20);
  for (std::size_t i = 2; i < 18; ++i) {
    field(i, i) = 0.1;
    line(i, i) = 1;
  }
  BinaryMask part(20, 20);
  part(5, 5) = part(6, 6) = 1;
  CHECK(region_grow(line, field, {.similarity_tol = 0.2}) == line);
  CHECK(region_grow(part, field, {.similarity_tol = 0.2}) == line);
}

TEST_CASE("morphology laws and thinning") {
  BinaryMask dot(7, 7);
  dot(3, 3) = 1;
  BinaryMask d = dilate(dot);
  CHECK(d.count() == 9);
  CHECK(d(2, 2) == 1);
  CHECK(d(4, 4) == 1);

  Rng rng(10);
  for (int t = 0; t < 40; ++t) {
    BinaryMask m = random_mask(rng, 15, 17, 0.35);
    CHECK(subset(m, morph(m, MorphOp::close)));
    CHECK(subset(erode(m), m));
    CHECK(subset(m, dilate(m)));
    BinaryMask th = thin(m);
    // X crossings of four diagonal branches may shift one pixel outward.
    CHECK(subset(th, dilate(m)));
    CHECK_FALSE(has_2x2(th));
    CHECK(label_components(th).count() == label_components(m).count());
    CHECK(enclosed_background_components(th) == enclosed_background_components(m));
  }

  BinaryMask bar(7, 20);
  for (std::size_t r = 2; r < 5; ++r)
    for (std::size_t c = 3; c < 17; ++c) bar(r, c) = 1;
  BinaryMask sk = thin(bar);
  CHECK(sk.count() == 14);
  for (std::size_t c = 3; c < 17; ++c) CHECK(sk(3, c) == 1);
}

TEST_CASE("repair: nothing to repair, erased segments recovered, determinism") {
  synth::SynthSpec spec;
  spec.seed = 11;
  const synth::Sample s = synth::generate(spec);
  const BinaryMask& gt = s.truth.boundary;

  const BinaryMask empty(gt.height(), gt.width());
  BinaryMask out = repair_with_mask(s.image, as_prob(gt), empty);
  CHECK(out == thin(gt));

  const auto erased = synth::pick_segments(s.truth, 0.2, 99);
  const BinaryMask kept = synth::erase_segments(s.truth, erased);
  BinaryMask fixed = repair::repair(s.image, as_prob(kept));
  const Grid<int> dist = edge::chebyshev_distance(fixed);
  std::size_t deleted = 0, recovered = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] && !kept[i]) {
      ++deleted;
      recovered += dist[i] <= 2;
    }
  REQUIRE(deleted > 0);
  CHECK(static_cast<double>(recovered) / static_cast<double>(deleted) >= 0.95);
  CHECK_FALSE(has_2x2(fixed));
  CHECK(repair::repair(s.image, as_prob(kept)) == fixed);
}
