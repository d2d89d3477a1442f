#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgf/feature_row.hpp"
#include "mgf/image.hpp"

namespace mgf::synth {

struct SynthSpec {
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t n_grains = 30;
  double weak_boundary_fraction = 0.0;
  std::size_t particle_count = 50;
  double particle_radius_min = 2.0;  // semi-axes in px
  double particle_radius_max = 5.0;
  std::size_t scratch_count = 2;
  double scratch_length_min = 60.0;
  double scratch_length_max = 160.0;
  double noise_sigma = 0.02;
  double pixel_scale_um = 1.0;
  double gd_at_pct = 1.0;
  std::uint64_t seed = 1;

  double grain_intensity = 0.65;
  double grain_jitter = 0.05;
  double boundary_intensity = 0.3;
  double particle_intensity = 0.15;

  /// Intercept test lines used for the analytic truth (same grid the measurement uses).
  std::size_t n_h_lines = 10;
  std::size_t n_v_lines = 10;
  std::size_t line_margin_px = 0;

  void validate() const;
};

struct Ellipse {
  double cr, cc;  // centre (row, col)
  double a, b;    // semi-axes, px
  double theta;   // rotation, radians
  bool contains(double r, double c) const;
  double area() const;
};

struct GroundTruth {
  BinaryMask boundary;          // 1-px thin, closed cells
  Grid<int> segment;            // boundary segment id per boundary pixel, -1 elsewhere
  std::size_t segment_count = 0;
  Grid<int> grain;              // Voronoi label per pixel
  BinaryMask phase;             // particles
  BinaryMask scratches;         // scratch pixels outside particles
  std::vector<Ellipse> particles;
  std::vector<int> weak_segments;
  double true_intercept_um = 0;
  double true_phase_fraction = 0;
  double true_mean_ecd_um = 0;
  double hv = 0;
};

struct Sample {
  GrayImage image;
  GroundTruth truth;
};

/// Throws std::runtime_error when particles cannot be placed after bounded retries.
Sample generate(const SynthSpec& spec);

/// Boundary mask with the listed segments removed.
BinaryMask erase_segments(const GroundTruth& truth, const std::vector<int>& segments);
/// Picks round(fraction * segment_count) distinct segments deterministically from `seed`.
std::vector<int> pick_segments(const GroundTruth& truth, double fraction, std::uint64_t seed);

/// Positions of intercept test lines: n evenly spaced lines strictly inside [margin, extent - margin).
std::vector<std::size_t> line_positions(std::size_t extent, std::size_t n, std::size_t margin);

enum class Law { linear, hall_petch };

struct LawCoefficients {
  double a = 25, b = 18, c = 30, d = 40, e = 0.5;
  double linear_size = -0.05;  // per-um slope of the linear law
};


/// Noise-free hardness under the given law.
double law_hv(Law law, const FeatureRow& row, const LawCoefficients& k = {});

/// n rows with Gd in [0.08, 2.9], grain size in [40, 100] um, fraction in [0.005, 0.12] and
/// ECD in [1, 10] um, labelled by the law plus N(0, sigma).
std::vector<FeatureRow> generate_feature_table(std::size_t n, Law law, double noise_sigma, std::uint64_t seed,
                                               const LawCoefficients& k = {});

}  // namespace mgf::synth
