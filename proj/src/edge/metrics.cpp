#include "mgf/edge/metrics.hpp"

#include <algorithm>

namespace mgf::edge {

Grid<int> chebyshev_distance(const BinaryMask& mask) {
  const std::size_t h = mask.height(), w = mask.width();
  const int far = static_cast<int>(h + w);
  Grid<int> d(h, w, far);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) d[i] = 0;
  // Two chamfer passes with unit weights on all 8 neighbours give the exact Chebyshev metric.
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      int v = d(r, c);
      if (r > 0) {
        v = std::min(v, d(r - 1, c) + 1);
        if (c > 0) v = std::min(v, d(r - 1, c - 1) + 1);
        if (c + 1 < w) v = std::min(v, d(r - 1, c + 1) + 1);
      }
      if (c > 0) v = std::min(v, d(r, c - 1) + 1);
      d(r, c) = v;
    }
  for (std::size_t r = h; r-- > 0;)
    for (std::size_t c = w; c-- > 0;) {
      int v = d(r, c);
      if (r + 1 < h) {
        v = std::min(v, d(r + 1, c) + 1);
        if (c > 0) v = std::min(v, d(r + 1, c - 1) + 1);
        if (c + 1 < w) v = std::min(v, d(r + 1, c + 1) + 1);
      }
      if (c + 1 < w) v = std::min(v, d(r, c + 1) + 1);
      d(r, c) = v;
    }
  return d;
}

namespace {

double matched_fraction(const BinaryMask& from, const BinaryMask& to, int tol) {
  const std::size_t n_from = from.count();
  if (n_from == 0) return to.count() == 0 ? 1.0 : 0.0;
  const Grid<int> dist = chebyshev_distance(to);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i] && dist[i] <= tol) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n_from);
}

}  // namespace

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

EdgeMetrics edge_metrics(const BinaryMask& pred, const BinaryMask& gt, int tol_px) {
  require_same_size(pred, gt, "edge_metrics");
  if (tol_px < 0) throw std::invalid_argument("edge_metrics: negative tolerance");
  EdgeMetrics m;
  m.match_tolerance_px = tol_px;
  m.precision = matched_fraction(pred, gt, tol_px);
  m.recall = matched_fraction(gt, pred, tol_px);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

EdgeMetricsSummary summarize(const std::vector<EdgeMetrics>& per_image) {
  EdgeMetricsSummary s;
  s.images = per_image.size();
  if (per_image.empty()) return s;
  for (const EdgeMetrics& m : per_image) {
    s.mean_precision += m.precision;
    s.mean_recall += m.recall;
    s.mean_f1 += m.f1;
  }
  const double n = static_cast<double>(per_image.size());
  s.mean_precision /= n;
  s.mean_recall /= n;
  s.mean_f1 /= n;
  s.f1_of_means = f1_score(s.mean_precision, s.mean_recall);
  return s;
}

}  // namespace mgf::edge
