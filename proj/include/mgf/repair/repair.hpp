#pragma once

#include <span>

#include "mgf/image.hpp"
#include "mgf/repair/contours.hpp"
#include "mgf/repair/morphology.hpp"

namespace mgf::repair {

/// Sobel 3x3 gradient magnitude with replicated borders.
Grid<double> sobel_magnitude(const GrayImage& image);

/// Otsu's threshold over a `bins`-bin histogram spanning [min, max] of `values`. Values at or
/// below the result form the lower class. Returns max when all values are equal.
double otsu_threshold(std::span<const double> values, std::size_t bins = 256);

/// Sobel magnitude above its Otsu threshold. A constant image gives an empty mask.
BinaryMask gradient_mask(const GrayImage& image);

/// Union of edge_prob >= threshold and the mask.
BinaryMask combine(const ProbMap& edge_prob, const BinaryMask& mask, double threshold = 0.5);

struct GrowOptions {
  double similarity_tol = 0.15;
  /// A component that grew and then fills more than this share of its bounding box (with both
  /// box sides > 2) is treated as noise and dropped. Values >= 1 disable the rule.
  double max_fill = 0.5;
};

/// Grows every 8-connected seed component over neighbours within `similarity_tol` of the
/// component's running mean intensity.
BinaryMask region_grow(const BinaryMask& seeds, const GrayImage& image, const GrowOptions& opt);

struct RepairParams {
  double edge_threshold = 0.5;
  double min_area_px = 30;
  GrowOptions grow{.similarity_tol = 0.05};
};

/// combine -> remove_small -> region_grow -> close -> thin, with the image's own gradient mask.
BinaryMask repair(const GrayImage& image, const ProbMap& edge_prob, const RepairParams& params = {});
/// Same pipeline with a caller-supplied gradient mask.
BinaryMask repair_with_mask(const GrayImage& image, const ProbMap& edge_prob, const BinaryMask& grad_mask,
                            const RepairParams& params = {});

}  // namespace mgf::repair
