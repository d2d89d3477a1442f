#pragma once

#include <vector>

#include "mgf/image.hpp"

namespace mgf::edge {

struct EdgeMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int match_tolerance_px = 2;
};

/// Chebyshev distance from every pixel to the nearest on-pixel of `mask`. With no on-pixels
/// every entry is `h + w` (farther than anything inside the image).
Grid<int> chebyshev_distance(const BinaryMask& mask);

/// Tolerance-matched boundary precision/recall. A predicted pixel is a hit when a ground-truth
/// pixel lies within `tol_px` (Chebyshev); recall swaps the roles. An empty denominator scores 1
/// when the other mask is empty too, else 0.
EdgeMetrics edge_metrics(const BinaryMask& pred, const BinaryMask& gt, int tol_px = 2);

double f1_score(double precision, double recall);

struct EdgeMetricsSummary {
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;       // per-image F1 averaged
  double f1_of_means = 0.0;   // harmonic mean of mean_precision and mean_recall
  std::size_t images = 0;
};

EdgeMetricsSummary summarize(const std::vector<EdgeMetrics>& per_image);

}  // namespace mgf::edge
