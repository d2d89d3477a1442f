#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mgf/autograd.hpp"
#include "mgf/edge/pdc.hpp"
#include "mgf/ops.hpp"
#include "mgf/rng.hpp"

namespace mgf::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Var random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Var(random_tensor(std::move(shape), rng, lo, hi), true);
}

/// Scalar probe loss sum(r * y) with fixed random weights, so every output element
/// contributes a distinct, non-degenerate gradient.
inline Var probe_loss(const Var& y, const Tensor& weights) { return sum(mul(y, Var(weights))); }

/// Direct nested-loop cross-correlation, independent of the im2col/GEMM path.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride,
                               std::size_t pad, std::size_t dil, std::size_t groups) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t cg = c / groups, og = o / groups;
  const std::size_t oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  Tensor y({n, o, oh, ow});
  for (std::size_t b0 = 0; b0 < n; ++b0)
    for (std::size_t oc = 0; oc < o; ++oc) {
      const std::size_t g = oc / og;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = b ? (*b)[oc] : 0.0;
          for (std::size_t ic = 0; ic < cg; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(oy * stride + i * dil) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + j * dil) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                s += w.at(oc, ic, i, j) * x.at(b0, g * cg + ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          y.at(b0, oc, oy, ox) = s;
        }
    }
  return y;
}

// Pixel pairs read straight from the definitions: each weight tap multiplies x[a] - x[b].
struct Pair {
  int wr, wc;  // weight tap
  int ar, ac;  // minuend offset
  int br, bc;  // subtrahend offset
};

inline std::vector<Pair> pairs_for(edge::PdcKind kind) {
  std::vector<Pair> out;
  if (kind == edge::PdcKind::cpdc) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.push_back({r, c, r, c, 1, 1});
  } else if (kind == edge::PdcKind::apdc) {
    for (int i = 0; i < 8; ++i)
      out.push_back({edge::kRing3[i][0], edge::kRing3[i][1], edge::kRing3[i][0], edge::kRing3[i][1], edge::kRing3[(i + 1) % 8][0],
                     edge::kRing3[(i + 1) % 8][1]});
  } else if (kind == edge::PdcKind::rpdc) {
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        if (r > 0 && r < 4 && c > 0 && c < 4) continue;
        const int ir = r == 0 ? 1 : r == 4 ? 3 : r;
        const int ic = c == 0 ? 1 : c == 4 ? 3 : c;
        out.push_back({r, c, r, c, ir, ic});
      }
  }
  return out;
}

// Direct sum_i w_i (x_a - x_b) with a replicated border; no kernel rewriting involved.
inline Tensor pdc_direct(const Tensor& x, const Tensor& w, edge::PdcKind kind) {
  const long k = static_cast<long>(w.dim(2)), half = k / 2;
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0);
  auto px = [&](std::size_t b, std::size_t c, long r, long q) {
    // Replicated border: clamp into the image.
    r = std::clamp(r, 0L, static_cast<long>(h) - 1);
    q = std::clamp(q, 0L, static_cast<long>(wd) - 1);
    return x.at(b, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
  };
  const auto pairs = pairs_for(kind);
  Tensor y({n, co, h, wd});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < wd; ++q) {
          double s = 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (const Pair& p : pairs) {
              const long r0 = static_cast<long>(r) - half, q0 = static_cast<long>(q) - half;
              s += w.at(o, c, static_cast<std::size_t>(p.wr), static_cast<std::size_t>(p.wc)) *
                   (px(b, c, r0 + p.ar, q0 + p.ac) - px(b, c, r0 + p.br, q0 + p.bc));
            }
          y.at(b, o, r, q) = s;
        }
  return y;
}

}  // namespace mgf::test
