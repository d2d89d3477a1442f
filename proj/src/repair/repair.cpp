#include "mgf/repair/repair.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace mgf::repair {

Grid<double> sobel_magnitude(const GrayImage& image) {
  const long h = static_cast<long>(image.height()), w = static_cast<long>(image.width());
  Grid<double> mag(image.height(), image.width());
  auto px = [&](long r, long c) {
    return image(static_cast<std::size_t>(std::clamp(r, 0L, h - 1)), static_cast<std::size_t>(std::clamp(c, 0L, w - 1)));
  };
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
      const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
      mag(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = std::hypot(gx, gy);
    }
  return mag;
}

double otsu_threshold(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw std::invalid_argument("otsu_threshold: no values");
  if (bins < 2) throw std::invalid_argument("otsu_threshold: need at least 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= lo) return hi;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> hist(bins, 0.0);
  for (double v : values) hist[std::min(bins - 1, static_cast<std::size_t>((v - lo) / width))] += 1.0;

  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (std::size_t b = 0; b < bins; ++b) sum_all += static_cast<double>(b) * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_bin = 0;
  for (std::size_t b = 0; b + 1 < bins; ++b) {
    w0 += hist[b];
    sum0 += static_cast<double>(b) * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + width * static_cast<double>(best_bin + 1);
}

BinaryMask gradient_mask(const GrayImage& image) {
  const Grid<double> mag = sobel_magnitude(image);
  BinaryMask out(image.height(), image.width());
  if (mag.empty()) return out;
  const double t = otsu_threshold(mag.data());
  for (std::size_t i = 0; i < mag.size(); ++i) out[i] = mag[i] > t;
  return out;
}

BinaryMask combine(const ProbMap& edge_prob, const BinaryMask& mask, double threshold) {
  require_same_size(edge_prob, mask, "combine");
  return mask_union(edge_prob.threshold(threshold), mask);
}

BinaryMask region_grow(const BinaryMask& seeds, const GrayImage& image, const GrowOptions& opt) {
  require_same_size(seeds, image, "region_grow");
  if (opt.similarity_tol < 0) throw std::invalid_argument("region_grow: negative similarity_tol");
  const std::size_t w = image.width();
  const Components comp = label_components(seeds);
  BinaryMask out(seeds.height(), seeds.width());
  std::vector<std::vector<std::size_t>> members(comp.count());
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (seeds[i]) members[static_cast<std::size_t>(comp.labels[i] - 1)].push_back(i);

  std::vector<int> visited(seeds.size(), 0);  // stamp = component label
  for (std::size_t k = 0; k < members.size(); ++k) {
    const int stamp = static_cast<int>(k) + 1;
    std::vector<std::size_t> region = members[k];
    double total = 0.0;
    for (std::size_t p : region) {
      total += image[p];
      visited[p] = stamp;
    }
    std::deque<std::size_t> frontier(region.begin(), region.end());
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      const long r = static_cast<long>(p / w), c = static_cast<long>(p % w);
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          if (!image.in_bounds(r + dr, c + dc)) continue;
          const std::size_t q = static_cast<std::size_t>(r + dr) * w + static_cast<std::size_t>(c + dc);
          if (visited[q] == stamp) continue;
          const double mean = total / static_cast<double>(region.size());
          if (std::abs(image[q] - mean) > opt.similarity_tol) continue;
          visited[q] = stamp;
          region.push_back(q);
          total += image[q];
          frontier.push_back(q);
        }
    }
    if (opt.max_fill < 1.0 && region.size() > members[k].size()) {
      std::size_t r0 = SIZE_MAX, r1 = 0, c0 = SIZE_MAX, c1 = 0;
      for (std::size_t p : region) {
        r0 = std::min(r0, p / w);
        r1 = std::max(r1, p / w);
        c0 = std::min(c0, p % w);
        c1 = std::max(c1, p % w);
      }
      const std::size_t bh = r1 - r0 + 1, bw = c1 - c0 + 1;
      const double fill = static_cast<double>(region.size()) / static_cast<double>(bh * bw);
      if (fill > opt.max_fill && bh > 2 && bw > 2) continue;
    }
    for (std::size_t p : region) out[p] = 1;
  }
  return out;
}

BinaryMask repair_with_mask(const GrayImage& image, const ProbMap& edge_prob, const BinaryMask& grad_mask,
                            const RepairParams& params) {
  require_same_size(image, edge_prob, "repair");
  BinaryMask m = combine(edge_prob, grad_mask, params.edge_threshold);
  m = remove_small(m, params.min_area_px);
  m = region_grow(m, image, params.grow);
  // Pixels that closing adds are thinned away first, so an already-thin network comes back as is.
  const BinaryMask before_close = m;
  return thin(morph(m, MorphOp::close), &before_close);
}

BinaryMask repair(const GrayImage& image, const ProbMap& edge_prob, const RepairParams& params) {
  return repair_with_mask(image, edge_prob, gradient_mask(image), params);
}

}  // namespace mgf::repair
