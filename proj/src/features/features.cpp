#include "mgf/features/features.hpp"

#include <cmath>
#include <numbers>

#include "mgf/repair/contours.hpp"
#include "mgf/synth/synth.hpp"

namespace mgf::features {

namespace {

std::size_t count_runs(const BinaryMask& m, std::size_t fixed, bool horizontal, std::size_t from, std::size_t to) {
  std::size_t runs = 0;
  bool inside = false;
  for (std::size_t k = from; k < to; ++k) {
    const bool on = horizontal ? m(fixed, k) : m(k, fixed);
    if (on && !inside) ++runs;
    inside = on;
  }
  return runs;
}

}  // namespace

InterceptResult linear_intercept_detail(const BinaryMask& boundary, const InterceptSpec& spec, double pixel_scale_um) {
  if (spec.n_h_lines < 1 || spec.n_v_lines < 1) throw std::invalid_argument("linear_intercept: need >= 1 line per direction");
  if (pixel_scale_um <= 0) throw std::invalid_argument("linear_intercept: pixel_scale_um must be > 0");
  const std::size_t h = boundary.height(), w = boundary.width(), m = spec.margin_px;
  if (2 * m >= h || 2 * m >= w) throw MeasurementUndefined("linear_intercept: margin leaves no test line");
  InterceptResult res;
  for (std::size_t r : synth::line_positions(h, spec.n_h_lines, m)) {
    const std::size_t n = count_runs(boundary, r, true, m, w - m);
    if (n == 0) continue;
    res.total_length_px += static_cast<double>(w - 2 * m);
    res.crossings += n;
    ++res.lines_used;
  }
  for (std::size_t c : synth::line_positions(w, spec.n_v_lines, m)) {
    const std::size_t n = count_runs(boundary, c, false, m, h - m);
    if (n == 0) continue;
    res.total_length_px += static_cast<double>(h - 2 * m);
    res.crossings += n;
    ++res.lines_used;
  }
  if (res.crossings == 0) throw MeasurementUndefined("linear_intercept: no test line crosses a boundary");
  res.mean_size_um = res.total_length_px / static_cast<double>(res.crossings) * pixel_scale_um;
  return res;
}

double linear_intercept(const BinaryMask& boundary, const InterceptSpec& spec, double pixel_scale_um) {
  return linear_intercept_detail(boundary, spec, pixel_scale_um).mean_size_um;
}

double area_fraction(const BinaryMask& phase) {
  return phase.empty() ? 0.0 : static_cast<double>(phase.count()) / static_cast<double>(phase.size());
}

double ecd(double area_px, double pixel_scale_um) {
  if (area_px < 0) throw std::invalid_argument("ecd: negative area");
  if (pixel_scale_um <= 0) throw std::invalid_argument("ecd: pixel_scale_um must be > 0");
  return 2.0 * std::sqrt(area_px * pixel_scale_um * pixel_scale_um / std::numbers::pi);
}

ParticleStats phase_particle_stats(const BinaryMask& phase, double pixel_scale_um, bool exclude_edge_touching) {
  const repair::Components comp = repair::label_components(phase);
  std::vector<bool> touches(comp.count(), false);
  if (exclude_edge_touching) {
    const std::size_t h = phase.height(), w = phase.width();
    for (std::size_t i = 0; i < phase.size(); ++i) {
      const std::size_t r = i / w, c = i % w;
      if (phase[i] && (r == 0 || c == 0 || r + 1 == h || c + 1 == w)) touches[static_cast<std::size_t>(comp.labels[i] - 1)] = true;
    }
  }
  ParticleStats s;
  double area = 0.0, diam = 0.0;
  for (std::size_t k = 0; k < comp.count(); ++k) {
    if (touches[k]) continue;
    const double a = static_cast<double>(comp.sizes[k]);
    area += a * pixel_scale_um * pixel_scale_um;
    diam += ecd(a, pixel_scale_um);
    ++s.particle_count;
  }
  if (s.particle_count > 0) {
    s.mean_area_um2 = area / static_cast<double>(s.particle_count);
    s.mean_ecd_um = diam / static_cast<double>(s.particle_count);
  }
  return s;
}

FeatureRow assemble_features(std::string id, double gd_at_pct, const BinaryMask& boundary, const BinaryMask& phase,
                             double pixel_scale_um, std::optional<double> hv, const InterceptSpec& spec) {
  require_same_size(boundary, phase, "assemble_features");
  if (gd_at_pct < 0) throw std::invalid_argument("assemble_features: negative gd_at_pct");
  FeatureRow row;
  row.id = std::move(id);
  row.gd_at_pct = gd_at_pct;
  row.grain_size_um = linear_intercept(boundary, spec, pixel_scale_um);
  row.phase_area_fraction = area_fraction(phase);
  row.phase_ecd_um = phase_particle_stats(phase, pixel_scale_um).mean_ecd_um;
  row.hv = hv;
  return row;
}

}  // namespace mgf::features
