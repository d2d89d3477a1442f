#pragma once

#include <optional>
#include <stdexcept>

#include "mgf/feature_row.hpp"
#include "mgf/image.hpp"

namespace mgf::features {

/// Raised when no test line crosses a boundary.
struct MeasurementUndefined : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InterceptSpec {
  std::size_t n_h_lines = 10;
  std::size_t n_v_lines = 10;
  std::size_t margin_px = 0;
};

struct InterceptResult {
  double mean_size_um = 0;
  double total_length_px = 0;
  std::size_t crossings = 0;
  std::size_t lines_used = 0;
};

/// Mean intercept length: sum of line lengths over total crossings, counting only lines with at
/// least one crossing; a run of consecutive boundary pixels on a line is one crossing.
InterceptResult linear_intercept_detail(const BinaryMask& boundary, const InterceptSpec& spec, double pixel_scale_um);
double linear_intercept(const BinaryMask& boundary, const InterceptSpec& spec, double pixel_scale_um);

double area_fraction(const BinaryMask& phase);

/// Equivalent circle diameter 2 sqrt(A / pi) of an area given in pixels.
double ecd(double area_px, double pixel_scale_um);

struct ParticleStats {
  double mean_area_um2 = 0;
  double mean_ecd_um = 0;
  std::size_t particle_count = 0;
};

/// Per 8-connected component; `exclude_edge_touching` skips components touching the border.
ParticleStats phase_particle_stats(const BinaryMask& phase, double pixel_scale_um, bool exclude_edge_touching = false);

FeatureRow assemble_features(std::string id, double gd_at_pct, const BinaryMask& boundary, const BinaryMask& phase,
                             double pixel_scale_um, std::optional<double> hv = std::nullopt,
                             const InterceptSpec& spec = {});

}  // namespace mgf::features
