#include "mgf/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "mgf/repair/morphology.hpp"
#include "mgf/rng.hpp"

namespace mgf::synth {

namespace {

constexpr std::size_t kPlacementRetries = 500;
constexpr std::size_t kMaxPocketPx = 4;

// Fills 4-connected background pockets of at most max_px pixels (junction artefacts).
void fill_pockets(BinaryMask& m, std::size_t max_px) {
  const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  Grid<std::uint8_t> seen(m.height(), m.width(), 0);
  std::vector<std::size_t> region, stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (m[start] || seen[start]) continue;
    region.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      region.push_back(p);
      const long r = static_cast<long>(p) / w, c = static_cast<long>(p) % w;
      for (auto [dr, dc] : {std::pair{-1L, 0L}, {1L, 0L}, {0L, -1L}, {0L, 1L}}) {
        const long nr = r + dr, nc = c + dc;
        if (nr < 0 || nc < 0 || nr >= h || nc >= w) continue;
        const auto q = static_cast<std::size_t>(nr * w + nc);
        if (m[q] || seen[q]) continue;
        seen[q] = 1;
        stack.push_back(q);
      }
    }
    if (region.size() <= max_px)
      for (std::size_t p : region) m[p] = 1;
  }
}

struct Seed {
  double r, c;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("synth: " + msg);
}

// Nearest and second-nearest seed, ties to the lower index.
std::pair<int, int> nearest_two(const std::vector<Seed>& seeds, double r, double c) {
  int best = -1, second = -1;
  double d1 = INFINITY, d2 = INFINITY;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const double d = (seeds[k].r - r) * (seeds[k].r - r) + (seeds[k].c - c) * (seeds[k].c - c);
    if (d < d1) {
      d2 = d1;
      second = best;
      d1 = d;
      best = static_cast<int>(k);
    } else if (d < d2) {
      d2 = d;
      second = static_cast<int>(k);
    }
  }
  return {best, second};
}

std::vector<std::pair<std::size_t, std::size_t>> raster_ellipse(const Ellipse& e, std::size_t h, std::size_t w) {
  std::vector<std::pair<std::size_t, std::size_t>> px;
  const long r0 = std::max(0L, static_cast<long>(std::floor(e.cr - e.a)));
  const long r1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(e.cr + e.a)));
  const long c0 = std::max(0L, static_cast<long>(std::floor(e.cc - e.a)));
  const long c1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(e.cc + e.a)));
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c)
      if (e.contains(static_cast<double>(r), static_cast<double>(c)))
        px.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  return px;
}

}  // namespace

void SynthSpec::validate() const {
  require(height >= 8 && width >= 8, "image must be at least 8x8");
  require(n_grains >= 2, "need at least 2 grains");
  require(weak_boundary_fraction >= 0 && weak_boundary_fraction <= 1, "weak_boundary_fraction outside [0, 1]");
  require(particle_radius_min > 0 && particle_radius_max >= particle_radius_min, "bad particle radius range");
  require(scratch_length_min >= 0 && scratch_length_max >= scratch_length_min, "bad scratch length range");
  require(noise_sigma >= 0, "negative noise_sigma");
  require(pixel_scale_um > 0, "pixel_scale_um must be > 0");
  require(gd_at_pct >= 0, "negative gd_at_pct");
  require(n_h_lines >= 1 && n_v_lines >= 1, "need at least one test line per direction");
  require(2 * line_margin_px < std::min(height, width), "line margin leaves no line");
}

bool Ellipse::contains(double r, double c) const {
  const double dr = r - cr, dc = c - cc;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double u = dc * ct + dr * st, v = -dc * st + dr * ct;
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

double Ellipse::area() const { return std::numbers::pi * a * b; }

std::vector<std::size_t> line_positions(std::size_t extent, std::size_t n, std::size_t margin) {
  std::vector<std::size_t> out;
  const double span = static_cast<double>(extent - 2 * margin);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(margin + static_cast<std::size_t>((static_cast<double>(i) + 0.5) * span / static_cast<double>(n)));
  return out;
}

Sample generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  Rng rng(spec.seed);

  std::vector<Seed> seeds(spec.n_grains);
  for (Seed& s : seeds) s = {rng.uniform(0.0, static_cast<double>(h)), rng.uniform(0.0, static_cast<double>(w))};

  GroundTruth gt;
  gt.grain = Grid<int>(h, w, 0);
  Grid<int> second(h, w, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      auto [a, b] = nearest_two(seeds, static_cast<double>(r), static_cast<double>(c));
      gt.grain(r, c) = a;
      second(r, c) = b;
    }

  // Mark the first pixel of every 4-adjacent label change, then thin to one pixel.
  BinaryMask raw(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const int l = gt.grain(r, c);
      if ((c + 1 < w && gt.grain(r, c + 1) != l) || (r + 1 < h && gt.grain(r + 1, c) != l)) raw(r, c) = 1;
    }
  fill_pockets(raw, kMaxPocketPx);
  // Thin inside a boundary frame so lines keep their contact with the image edge.
  BinaryMask framed(h + 2, w + 2, 1);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) framed(r + 1, c + 1) = raw(r, c);
  framed = repair::thin(framed);
  gt.boundary = BinaryMask(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) gt.boundary(r, c) = framed(r + 1, c + 1);

  // A segment is the shared edge of two cells, keyed by the pixel's two nearest seeds.
  gt.segment = Grid<int>(h, w, -1);
  std::map<std::pair<int, int>, int> ids;
  for (std::size_t i = 0; i < gt.boundary.size(); ++i) {
    if (!gt.boundary[i]) continue;
    const int a = gt.grain[i], b = second[i];
    const auto key = std::minmax(a, b);
    auto [it, inserted] = ids.emplace(key, static_cast<int>(ids.size()));
    gt.segment[i] = it->second;
  }
  gt.segment_count = ids.size();

  std::vector<double> tone(spec.n_grains);
  for (double& t : tone) t = spec.grain_intensity + rng.uniform(-spec.grain_jitter, spec.grain_jitter);

  gt.weak_segments = pick_segments(gt, spec.weak_boundary_fraction, Rng::derive(spec.seed, 7).next_u64());
  std::vector<bool> weak(gt.segment_count, false);
  for (int s : gt.weak_segments) weak[static_cast<std::size_t>(s)] = true;

  GrayImage img(h, w, 0.0, spec.pixel_scale_um);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const bool edge = gt.boundary[i] && !weak[static_cast<std::size_t>(gt.segment[i])];
    img[i] = edge ? spec.boundary_intensity : tone[static_cast<std::size_t>(gt.grain[i])];
  }

  // Particles: fully inside the image, with at least one background pixel between any two.
  gt.phase = BinaryMask(h, w);
  std::vector<std::size_t> boundary_px;
  for (std::size_t i = 0; i < gt.boundary.size(); ++i)
    if (gt.boundary[i]) boundary_px.push_back(i);
  for (std::size_t k = 0; k < spec.particle_count; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      Ellipse e;
      e.a = rng.uniform(spec.particle_radius_min, spec.particle_radius_max);
      e.b = rng.uniform(spec.particle_radius_min, e.a);
      e.theta = rng.uniform(0.0, std::numbers::pi);
      if (k % 2 == 0 && !boundary_px.empty()) {
        const std::size_t p = boundary_px[rng.below(boundary_px.size())];
        e.cr = static_cast<double>(p / w) + rng.uniform(-0.5, 0.5);
        e.cc = static_cast<double>(p % w) + rng.uniform(-0.5, 0.5);
      } else {
        e.cr = rng.uniform(0.0, static_cast<double>(h - 1));
        e.cc = rng.uniform(0.0, static_cast<double>(w - 1));
      }
      if (e.cr - e.a < 1 || e.cc - e.a < 1 || e.cr + e.a > static_cast<double>(h) - 2 ||
          e.cc + e.a > static_cast<double>(w) - 2)
        continue;
      const auto px = raster_ellipse(e, h, w);
      if (px.empty()) continue;
      bool clash = false;
      for (auto [r, c] : px)
        for (long dr = -1; dr <= 1 && !clash; ++dr)
          for (long dc = -1; dc <= 1 && !clash; ++dc)
            clash = gt.phase.on(static_cast<long>(r) + dr, static_cast<long>(c) + dc);
      if (clash) continue;
      for (auto [r, c] : px) gt.phase(r, c) = 1;
      gt.particles.push_back(e);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("synth: could not place particle " + std::to_string(k + 1) + " of " +
                               std::to_string(spec.particle_count) + " after " + std::to_string(kPlacementRetries) +
                               " attempts");
  }
  for (std::size_t i = 0; i < img.size(); ++i)
    if (gt.phase[i]) img[i] = spec.particle_intensity;

  gt.scratches = BinaryMask(h, w);
  for (std::size_t k = 0; k < spec.scratch_count; ++k) {
    const double r0 = rng.uniform(0.0, static_cast<double>(h - 1)), c0 = rng.uniform(0.0, static_cast<double>(w - 1));
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double len = rng.uniform(spec.scratch_length_min, spec.scratch_length_max);
    for (double t = 0.0; t <= len; t += 0.25) {
      const long r = std::lround(r0 + t * std::sin(ang)), c = std::lround(c0 + t * std::cos(ang));
      if (!img.in_bounds(r, c)) break;
      const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
      if (gt.phase(ur, uc)) continue;
      gt.scratches(ur, uc) = 1;
      img(ur, uc) = spec.particle_intensity;
    }
  }

  if (spec.noise_sigma > 0)
    for (double& v : img.data()) v = std::clamp(v + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);

  // Analytic truth: label changes along the measurement lines, ellipse areas.
  double length = 0.0, crossings = 0.0;
  const std::size_t m = spec.line_margin_px;
  for (std::size_t r : line_positions(h, spec.n_h_lines, m)) {
    std::size_t n = 0;
    for (std::size_t c = m; c + 1 < w - m; ++c) n += gt.grain(r, c) != gt.grain(r, c + 1);
    if (n == 0) continue;
    length += static_cast<double>(w - 2 * m);
    crossings += static_cast<double>(n);
  }
  for (std::size_t c : line_positions(w, spec.n_v_lines, m)) {
    std::size_t n = 0;
    for (std::size_t r = m; r + 1 < h - m; ++r) n += gt.grain(r, c) != gt.grain(r + 1, c);
    if (n == 0) continue;
    length += static_cast<double>(h - 2 * m);
    crossings += static_cast<double>(n);
  }
  gt.true_intercept_um = crossings > 0 ? length / crossings * spec.pixel_scale_um : 0.0;
  double area = 0.0, ecd = 0.0;
  for (const Ellipse& e : gt.particles) {
    area += e.area();
    ecd += 2.0 * std::sqrt(e.a * e.b) * spec.pixel_scale_um;
  }
  gt.true_phase_fraction = area / static_cast<double>(h * w);
  gt.true_mean_ecd_um = gt.particles.empty() ? 0.0 : ecd / static_cast<double>(gt.particles.size());
  FeatureRow row{"", spec.gd_at_pct, gt.true_intercept_um, gt.true_phase_fraction, gt.true_mean_ecd_um, {}};
  gt.hv = law_hv(Law::hall_petch, row);

  return {std::move(img), std::move(gt)};
}

std::vector<int> pick_segments(const GroundTruth& truth, double fraction, std::uint64_t seed) {
  if (fraction < 0 || fraction > 1) throw std::invalid_argument("pick_segments: fraction outside [0, 1]");
  std::vector<int> ids(truth.segment_count);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  ids.resize(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size()))));
  std::sort(ids.begin(), ids.end());
  return ids;
}

BinaryMask erase_segments(const GroundTruth& truth, const std::vector<int>& segments) {
  std::vector<bool> drop(truth.segment_count, false);
  for (int s : segments) drop.at(static_cast<std::size_t>(s)) = true;
  BinaryMask out = truth.boundary;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] && drop[static_cast<std::size_t>(truth.segment[i])]) out[i] = 0;
  return out;
}

double law_hv(Law law, const FeatureRow& row, const LawCoefficients& k) {
  const double base = k.a + k.b * row.gd_at_pct + k.d * row.phase_area_fraction + k.e * row.phase_ecd_um;
  if (law == Law::linear) return base + k.linear_size * row.grain_size_um;
  if (row.grain_size_um <= 0) throw std::invalid_argument("law_hv: grain size must be > 0");
  return base + k.c / std::sqrt(row.grain_size_um);
}

std::vector<FeatureRow> generate_feature_table(std::size_t n, Law law, double noise_sigma, std::uint64_t seed,
                                               const LawCoefficients& k) {
  if (n < 3) throw std::invalid_argument("generate_feature_table: need n >= 3");
  if (noise_sigma < 0) throw std::invalid_argument("generate_feature_table: negative noise_sigma");
  Rng rng(seed);
  std::vector<FeatureRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureRow& r = rows[i];
    r.id = "s" + std::to_string(i + 1);
    r.gd_at_pct = rng.uniform(0.08, 2.9);
    r.grain_size_um = rng.uniform(40.0, 100.0);
    r.phase_area_fraction = rng.uniform(0.005, 0.12);
    r.phase_ecd_um = rng.uniform(1.0, 10.0);
    r.hv = law_hv(law, r, k) + (noise_sigma > 0 ? rng.normal(0.0, noise_sigma) : 0.0);
  }
  return rows;
}

}  // namespace mgf::synth
