#pragma once

#include <vector>

#include "mgf/image.hpp"

namespace mgf::repair {

struct Point {
  long r = 0;
  long c = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Contour {
  std::vector<Point> pixels;    // traced border, in order, closed implicitly
  double enclosed_area_px = 0;  // shoelace area of the traced polygon
  bool is_hole = false;
  int parent = -1;              // index into the same list; -1 for top level
};

/// Border following over 8-connected foreground (4-connected background), returning outer
/// borders and hole borders with their nesting.
std::vector<Contour> trace_contours(const BinaryMask& mask);

double shoelace_area(const std::vector<Point>& polygon);

/// 8-connected component labels: 0 background, 1..count in raster order of first pixel.
struct Components {
  Grid<int> labels;
  std::vector<std::size_t> sizes;  // sizes[k] for label k + 1
  std::size_t count() const { return sizes.size(); }
};

Components label_components(const BinaryMask& mask);

/// Erases 8-connected components with fewer than `min_area_px` pixels.
BinaryMask remove_small(const BinaryMask& mask, double min_area_px);

}  // namespace mgf::repair
