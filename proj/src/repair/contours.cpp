#include "mgf/repair/contours.hpp"

#include <cmath>
#include <stdexcept>

namespace mgf::repair {

namespace {

// Neighbour offsets, counter-clockwise on screen starting east.
constexpr int kDr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr int kDc[8] = {1, 1, 0, -1, -1, -1, 0, 1};

int direction(long dr, long dc) {
  for (int d = 0; d < 8; ++d)
    if (kDr[d] == dr && kDc[d] == dc) return d;
  throw std::logic_error("trace_contours: non-adjacent step");
}

}  // namespace

double shoelace_area(const std::vector<Point>& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = polygon[i];
    const Point& b = polygon[(i + 1) % n];
    twice += static_cast<double>(a.c * b.r - b.c * a.r);
  }
  return std::abs(twice) / 2.0;
}

std::vector<Contour> trace_contours(const BinaryMask& mask) {
  const long h = static_cast<long>(mask.height()), w = static_cast<long>(mask.width());
  // One-pixel zero frame so neighbour lookups never leave the grid.
  const long H = h + 2, W = w + 2;
  std::vector<int> f(static_cast<std::size_t>(H * W), 0);
  auto at = [&](long r, long c) -> int& { return f[static_cast<std::size_t>(r * W + c)]; };
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) at(r + 1, c + 1) = mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) ? 1 : 0;

  std::vector<Contour> out;
  // Border number NBD maps to contour index NBD - 2; NBD 1 is the frame (a hole border).
  auto is_hole_nbd = [&](int nbd) { return nbd == 1 ? true : out[static_cast<std::size_t>(nbd - 2)].is_hole; };
  auto parent_nbd = [&](int nbd) { return nbd == 1 ? -1 : out[static_cast<std::size_t>(nbd - 2)].parent; };

  int nbd = 1;
  for (long i = 1; i < H - 1; ++i) {
    int lnbd = 1;
    for (long j = 1; j < W - 1; ++j) {
      const int fij = at(i, j);
      if (fij == 0) continue;
      long i2 = 0, j2 = 0;
      bool start = false, hole = false;
      if (fij == 1 && at(i, j - 1) == 0) {
        start = true;
        i2 = i;
        j2 = j - 1;
      } else if (fij >= 1 && at(i, j + 1) == 0) {
        start = true;
        hole = true;
        i2 = i;
        j2 = j + 1;
        if (fij > 1) lnbd = fij;
      }
      if (start) {
        ++nbd;
        Contour ct;
        ct.is_hole = hole;
        // Parent: same type as LNBD's border -> share its parent; otherwise LNBD itself.
        const int lnbd_contour = lnbd == 1 ? -1 : lnbd - 2;
        ct.parent = (hole == is_hole_nbd(lnbd)) ? parent_nbd(lnbd) : lnbd_contour;
        out.push_back(ct);
        Contour& cur = out.back();

        // Clockwise search around (i, j) from (i2, j2) for a non-zero pixel.
        const int d0 = direction(i2 - i, j2 - j);
        long i1 = -1, j1 = -1;
        for (int k = 0; k < 8; ++k) {
          const int d = ((d0 - k) % 8 + 8) % 8;
          if (at(i + kDr[d], j + kDc[d]) != 0) {
            i1 = i + kDr[d];
            j1 = j + kDc[d];
            break;
          }
        }
        if (i1 < 0) {
          at(i, j) = -nbd;
          cur.pixels.push_back({i - 1, j - 1});
        } else {
          i2 = i1;
          j2 = j1;
          long i3 = i, j3 = j;
          while (true) {
            cur.pixels.push_back({i3 - 1, j3 - 1});
            const int ds = direction(i2 - i3, j2 - j3);
            long i4 = -1, j4 = -1;
            bool east_zero = false;
            for (int k = 1; k <= 8; ++k) {
              const int d = (ds + k) % 8;
              const long rr = i3 + kDr[d], cc = j3 + kDc[d];
              if (at(rr, cc) != 0) {
                i4 = rr;
                j4 = cc;
                break;
              }
              if (d == 0) east_zero = true;
            }
            if (east_zero)
              at(i3, j3) = -nbd;
            else if (at(i3, j3) == 1)
              at(i3, j3) = nbd;
            if (i4 == i && j4 == j && i3 == i1 && j3 == j1) break;
            i2 = i3;
            j2 = j3;
            i3 = i4;
            j3 = j4;
          }
        }
        cur.enclosed_area_px = shoelace_area(cur.pixels);
      }
      if (at(i, j) != 1) lnbd = std::abs(at(i, j));
    }
  }
  return out;
}

Components label_components(const BinaryMask& mask) {
  const std::size_t h = mask.height(), w = mask.width();
  Components comp{Grid<int>(h, w, 0), {}};
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || comp.labels[start] != 0) continue;
    const int label = static_cast<int>(comp.sizes.size()) + 1;
    std::size_t size = 0;
    comp.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const long r = static_cast<long>(p / w), c = static_cast<long>(p % w);
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          if (!mask.on(r + dr, c + dc)) continue;
          const std::size_t q = static_cast<std::size_t>(r + dr) * w + static_cast<std::size_t>(c + dc);
          if (comp.labels[q] != 0) continue;
          comp.labels[q] = label;
          stack.push_back(q);
        }
    }
    comp.sizes.push_back(size);
  }
  return comp;
}

BinaryMask remove_small(const BinaryMask& mask, double min_area_px) {
  if (min_area_px < 0) throw std::invalid_argument("remove_small: negative min_area_px");
  const Components comp = label_components(mask);
  BinaryMask out = mask;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] && static_cast<double>(comp.sizes[static_cast<std::size_t>(comp.labels[i] - 1)]) < min_area_px) out[i] = 0;
  return out;
}

}  // namespace mgf::repair
