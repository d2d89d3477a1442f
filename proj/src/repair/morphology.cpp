#include "mgf/repair/morphology.hpp"

#include <utility>
#include <vector>

namespace mgf::repair {

namespace {

// Neighbours x1..x8 counter-clockwise from east, as (dr, dc).
constexpr int kNr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr int kNc[8] = {1, 1, 0, -1, -1, -1, 0, 1};

int neighbour_count(const BinaryMask& m, long r, long c) {
  int n = 0;
  for (int k = 0; k < 8; ++k) n += m.on(r + kNr[k], c + kNc[k]);
  return n;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width());
  for (long r = 0; r < static_cast<long>(mask.height()); ++r)
    for (long c = 0; c < static_cast<long>(mask.width()); ++c) {
      bool any = false;
      for (long dr = -1; dr <= 1 && !any; ++dr)
        for (long dc = -1; dc <= 1 && !any; ++dc) any = mask.on(r + dr, c + dc);
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = any;
    }
  return out;
}

BinaryMask erode(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width());
  for (long r = 0; r < static_cast<long>(mask.height()); ++r)
    for (long c = 0; c < static_cast<long>(mask.width()); ++c) {
      bool all = true;
      for (long dr = -1; dr <= 1 && all; ++dr)
        for (long dc = -1; dc <= 1 && all; ++dc)
          all = !mask.in_bounds(r + dr, c + dc) || mask.on(r + dr, c + dc);
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = all;
    }
  return out;
}

bool is_simple(const BinaryMask& m, std::size_t r0, std::size_t c0) {
  const long r = static_cast<long>(r0), c = static_cast<long>(c0);
  int x[9];
  for (int k = 0; k < 8; ++k) x[k] = m.on(r + kNr[k], c + kNc[k]);
  x[8] = x[0];
  // 8-connectivity crossing number (Yokoi): count of 4-neighbour slots that open a new
  // foreground run. A simple point has exactly one, and at least one background 4-neighbour.
  int n8 = 0;
  for (int k = 0; k < 8; k += 2) {
    const int a = 1 - x[k], b = 1 - x[k + 1], cc = 1 - x[(k + 2) % 8];
    n8 += a - a * b * cc;
  }
  const bool border = !x[0] || !x[2] || !x[4] || !x[6];
  return border && n8 == 1;
}

namespace {

// One round of directional peeling. Pixels flagged in `deferred` are left alone; while they
// exist, the other pixels may be peeled back from their ends too.
bool peel(BinaryMask& m, const BinaryMask* deferred) {
  const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  constexpr int side_r[4] = {-1, 1, 0, 0};  // north, south, east, west
  constexpr int side_c[4] = {0, 0, 1, -1};
  bool changed = false;
  for (int s = 0; s < 4; ++s) {
    // Border candidates come from the state before the sub-iteration so a pass peels one
    // layer; deletion is then sequential so connectivity is checked against the live mask.
    std::vector<std::pair<long, long>> candidates;
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c)
        if (m.on(r, c) && !m.on(r + side_r[s], c + side_c[s]) && !(deferred && deferred->on(r, c)))
          candidates.emplace_back(r, c);
    for (auto [r, c] : candidates) {
      if (!deferred && neighbour_count(m, r, c) < 2) continue;  // endpoint or isolated
      const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
      if (!is_simple(m, ur, uc)) continue;
      m(ur, uc) = 0;
      changed = true;
    }
  }
  return changed;
}

bool block_at(const BinaryMask& m, long r, long c) {
  return m.on(r, c) && m.on(r, c + 1) && m.on(r + 1, c) && m.on(r + 1, c + 1);
}

bool touches_block(const BinaryMask& m, long r, long c) {
  for (long dr = -1; dr <= 0; ++dr)
    for (long dc = -1; dc <= 0; ++dc)
      if (block_at(m, r + dr, c + dc)) return true;
  return false;
}

// Clears a 2x2 block. First tries a plain simple-pixel deletion; a block whose pixels all
// carry private diagonal branches (an X crossing) instead gets one pixel swapped for an outer
// 4-neighbour, added only when simple so topology never changes.
bool clear_block(BinaryMask& m, long r, long c) {
  for (int k = 0; k < 4; ++k) {
    const long pr = r + k / 2, pc = c + k % 2;
    if (is_simple(m, static_cast<std::size_t>(pr), static_cast<std::size_t>(pc))) {
      m(static_cast<std::size_t>(pr), static_cast<std::size_t>(pc)) = 0;
      return true;
    }
  }
  for (int k = 0; k < 4; ++k) {
    const long pr = r + k / 2, pc = c + k % 2;
    const long out_r = k / 2 ? 1 : -1, out_c = k % 2 ? 1 : -1;  // away from the block
    for (auto [qr, qc] : {std::pair{pr + out_r, pc}, std::pair{pr, pc + out_c}}) {
      if (!m.in_bounds(qr, qc) || m.on(qr, qc)) continue;
      const auto uqr = static_cast<std::size_t>(qr), uqc = static_cast<std::size_t>(qc);
      m(uqr, uqc) = 1;
      const auto upr = static_cast<std::size_t>(pr), upc = static_cast<std::size_t>(pc);
      if (is_simple(m, uqr, uqc) && is_simple(m, upr, upc)) {
        m(upr, upc) = 0;
        if (!touches_block(m, qr, qc)) return true;
        m(upr, upc) = 1;
      }
      m(uqr, uqc) = 0;
    }
  }
  return false;
}

}  // namespace

BinaryMask thin(const BinaryMask& mask, const BinaryMask* deferred) {
  BinaryMask m = mask;
  if (deferred) {
    require_same_size(mask, *deferred, "thin");
    while (peel(m, deferred)) {
    }
  }
  while (peel(m, nullptr)) {
  }
  const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  for (long r = 0; r + 1 < h; ++r)
    for (long c = 0; c + 1 < w; ++c)
      if (block_at(m, r, c)) clear_block(m, r, c);
  return m;
}

BinaryMask morph(const BinaryMask& mask, MorphOp op) {
  switch (op) {
    case MorphOp::dilate: return dilate(mask);
    case MorphOp::erode: return erode(mask);
    case MorphOp::close: return erode(dilate(mask));
    case MorphOp::open: return dilate(erode(mask));
    case MorphOp::thin: return thin(mask, nullptr);
  }
  return mask;
}

}  // namespace mgf::repair
