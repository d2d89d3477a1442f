#include "mgf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mgf/kernels.hpp"

namespace mgf {

namespace {

using kernels::MatRef;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  require(x.defined() && x.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
}

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t o, kh, kw;       // weight
  std::size_t oh, ow;          // output
  std::size_t cg, og;          // channels per group
  Conv2dOptions opt;
  std::size_t patch() const { return cg * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.opt.stride);
  const auto dil = static_cast<std::ptrdiff_t>(g.opt.dilation);
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.cg; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ki) * dil;
          double* out = row + oy * g.ow;
          if (iy < 0 || iy >= H) {
            std::fill_n(out, g.ow, 0.0);
            continue;
          }
          const double* xrow = xc + iy * W;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox) * stride - pad + static_cast<std::ptrdiff_t>(kj) * dil;
            out[ox] = (ix >= 0 && ix < W) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.opt.stride);
  const auto dil = static_cast<std::ptrdiff_t>(g.opt.dilation);
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.cg; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ki) * dil;
          if (iy < 0 || iy >= H) continue;
          double* dxrow = dxc + iy * W;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox) * stride - pad + static_cast<std::ptrdiff_t>(kj) * dil;
            if (ix >= 0 && ix < W) dxrow[ix] += src[ox];
          }
        }
      }
    }
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, "softmax: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// Shape split around one axis: (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct ResizeTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

ResizeTaps resize_taps(std::size_t in, std::size_t out) {
  ResizeTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(opt.dilation * (kernel - 1) + 1);
  const std::ptrdiff_t padded = static_cast<std::ptrdiff_t>(in + 2 * opt.padding);
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<std::ptrdiff_t>(opt.stride)) + 1;
}

Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias, const Conv2dOptions& opt) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  require(opt.stride >= 1 && opt.dilation >= 1 && opt.groups >= 1, "conv2d: stride, dilation and groups must be >= 1");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.opt = opt;
  require(g.c % opt.groups == 0, "conv2d: groups " + std::to_string(opt.groups) + " do not divide " +
                                     std::to_string(g.c) + " input channels");
  require(g.o % opt.groups == 0, "conv2d: groups " + std::to_string(opt.groups) + " do not divide " +
                                     std::to_string(g.o) + " output channels");
  g.cg = g.c / opt.groups;
  g.og = g.o / opt.groups;
  require(weight.dim(1) == g.cg, "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                     shape_str(input.shape()) + " and groups " + std::to_string(opt.groups));
  if (bias) require(bias->value().rank() == 1 && bias->dim(0) == g.o, "conv2d: bias must have shape (out_ch)");
  g.oh = conv_out_size(g.h, g.kh, opt);
  g.ow = conv_out_size(g.w, g.kw, opt);
  require(g.oh > 0 && g.ow > 0, "conv2d: kernel larger than padded input");

  Tensor out({g.n, g.o, g.oh, g.ow});
  const double* x = input.value().ptr();
  const double* wt = weight.value().ptr();
  std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.pixels());
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t grp = 0; grp < opt.groups; ++grp) {
      const double* xg = x + (n * g.c + grp * g.cg) * g.h * g.w;
      const double* cols = xg;
      if (!g.pointwise()) {
        im2col(g, xg, col.data());
        cols = col.data();
      }
      double* yg = out.ptr() + (n * g.o + grp * g.og) * g.pixels();
      kernels::gemm(g.og, g.pixels(), g.patch(),
                    MatRef{wt + grp * g.og * g.patch(), static_cast<std::ptrdiff_t>(g.patch()), 1},
                    MatRef{cols, static_cast<std::ptrdiff_t>(g.pixels()), 1}, yg,
                    static_cast<std::ptrdiff_t>(g.pixels()), false);
    }
    if (bias) {
      const double* b = bias->value().ptr();
      for (std::size_t o = 0; o < g.o; ++o) {
        double* y = out.ptr() + (n * g.o + o) * g.pixels();
        for (std::size_t p = 0; p < g.pixels(); ++p) y[p] += b[o];
      }
    }
  }

  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return Var::make(std::move(out), std::move(inputs), [g, has_bias](detail::Node& node) {
    detail::Node& in = *node.inputs[0];
    detail::Node& wn = *node.inputs[1];
    const double* dy = node.grad.ptr();
    const double* x = in.value.ptr();
    const double* wt = wn.value.ptr();
    std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.pixels());
    std::vector<double> dcol(g.patch() * g.pixels());
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t grp = 0; grp < g.opt.groups; ++grp) {
        const double* dyg = dy + (n * g.o + grp * g.og) * g.pixels();
        if (wn.requires_grad) {
          const double* xg = x + (n * g.c + grp * g.cg) * g.h * g.w;
          const double* cols = xg;
          if (!g.pointwise()) {
            im2col(g, xg, col.data());
            cols = col.data();
          }
          // dW (og x patch) += dY (og x pixels) * cols^T
          kernels::gemm(g.og, g.patch(), g.pixels(), MatRef{dyg, static_cast<std::ptrdiff_t>(g.pixels()), 1},
                        MatRef{cols, 1, static_cast<std::ptrdiff_t>(g.pixels())},
                        wn.grad_buffer().ptr() + grp * g.og * g.patch(), static_cast<std::ptrdiff_t>(g.patch()),
                        true);
        }
        if (in.requires_grad) {
          double* dxg = in.grad_buffer().ptr() + (n * g.c + grp * g.cg) * g.h * g.w;
          // dcols (patch x pixels) = W^T * dY
          const MatRef wT{wt + grp * g.og * g.patch(), 1, static_cast<std::ptrdiff_t>(g.patch())};
          const MatRef dyr{dyg, static_cast<std::ptrdiff_t>(g.pixels()), 1};
          if (g.pointwise()) {
            kernels::gemm(g.patch(), g.pixels(), g.og, wT, dyr, dxg, static_cast<std::ptrdiff_t>(g.pixels()), true);
          } else {
            kernels::gemm(g.patch(), g.pixels(), g.og, wT, dyr, dcol.data(), static_cast<std::ptrdiff_t>(g.pixels()),
                          false);
            col2im_add(g, dcol.data(), dxg);
          }
        }
      }
    }
    if (has_bias && node.inputs[2]->requires_grad) {
      double* db = node.inputs[2]->grad_buffer().ptr();
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t o = 0; o < g.o; ++o) {
          const double* d = dy + (n * g.o + o) * g.pixels();
          double s = 0.0;
          for (std::size_t p = 0; p < g.pixels(); ++p) s += d[p];
          db[o] += s;
        }
    }
  });
}

Var bilinear_resize(const Var& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_resize");
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: target size must be at least 1x1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h >= 1 && w >= 1, "bilinear_resize: empty input");
  const ResizeTaps ty = resize_taps(h, out_h);
  const ResizeTaps tx = resize_taps(w, out_w);
  Tensor out({n, c, out_h, out_w});
  const double* x = input.value().ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x + plane * h * w;
    double* dst = out.ptr() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* r0 = src + ty.lo[oy] * w;
      const double* r1 = src + ty.hi[oy] * w;
      const double fy = ty.frac[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fx = tx.frac[ox];
        const double top = r0[tx.lo[ox]] * (1.0 - fx) + r0[tx.hi[ox]] * fx;
        const double bot = r1[tx.lo[ox]] * (1.0 - fx) + r1[tx.hi[ox]] * fx;
        dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return Var::make(std::move(out), {input}, [=](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    const double* dy = node.grad.ptr();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      double* d = dx + plane * h * w;
      const double* g = dy + plane * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double fy = ty.frac[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const double fx = tx.frac[ox];
          const double v = g[oy * out_w + ox];
          d[ty.lo[oy] * w + tx.lo[ox]] += v * (1.0 - fy) * (1.0 - fx);
          d[ty.lo[oy] * w + tx.hi[ox]] += v * (1.0 - fy) * fx;
          d[ty.hi[oy] * w + tx.lo[ox]] += v * fy * (1.0 - fx);
          d[ty.hi[oy] * w + tx.hi[ox]] += v * fy * fx;
        }
      }
    }
  });
}

Var max_pool2x2(const Var& input) {
  require_rank(input, 4, "max_pool2x2");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  require(oh >= 1 && ow >= 1, "max_pool2x2: input smaller than 2x2");
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const double* x = input.value().ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = plane * oh * ow + oy * ow + ox;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
  }
  return Var::make(std::move(out), {input}, [argmax = std::move(argmax)](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += node.grad[i];
  });
}

Var pad_replicate(const Var& input, std::size_t pad) {
  require_rank(input, 4, "pad_replicate");
  if (pad == 0) return input;
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h >= 1 && w >= 1, "pad_replicate: empty input");
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  // Source index of every padded pixel, shared by forward and backward.
  std::vector<std::size_t> src(ph * pw);
  for (std::size_t r = 0; r < ph; ++r)
    for (std::size_t q = 0; q < pw; ++q) {
      const std::size_t sr = std::min(h - 1, r < pad ? 0 : r - pad);
      const std::size_t sq = std::min(w - 1, q < pad ? 0 : q - pad);
      src[r * pw + q] = sr * w + sq;
    }
  Tensor out({n, c, ph, pw});
  const double* x = input.value().ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t i = 0; i < ph * pw; ++i) out[plane * ph * pw + i] = x[plane * h * w + src[i]];
  return Var::make(std::move(out), {input}, [src = std::move(src), planes = n * c, hw = h * w](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    const std::size_t phw = src.size();
    for (std::size_t plane = 0; plane < planes; ++plane)
      for (std::size_t i = 0; i < phw; ++i) dx[plane * hw + src[i]] += node.grad[plane * phw + i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return Var::make(std::move(out), {x}, [](detail::Node& node) {
    detail::Node& in = *node.inputs[0];
    double* dx = in.grad_buffer().ptr();
    for (std::size_t i = 0; i < node.grad.numel(); ++i)
      if (in.value[i] > 0.0) dx[i] += node.grad[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return Var::make(std::move(out), {x}, [](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < node.grad.numel(); ++i) {
      const double s = node.value[i];
      dx[i] += node.grad[i] * s * (1.0 - s);
    }
  });
}

Var softmax(const Var& x, int axis) {
  require(x.defined() && x.value().rank() >= 1, "softmax: empty input");
  const std::size_t ax = normalize_axis(axis, x.value().rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Tensor out = x.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double* base = out.ptr() + o * s.extent * s.inner + i;
      double mx = base[0];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, base[k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        base[k * s.inner] = std::exp(base[k * s.inner] - mx);
        total += base[k * s.inner];
      }
      for (std::size_t k = 0; k < s.extent; ++k) base[k * s.inner] /= total;
    }
  return Var::make(std::move(out), {x}, [s](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dotp = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dotp += node.grad[base + k * s.inner] * node.value[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          dx[idx] += node.value[idx] * (node.grad[idx] - dotp);
        }
      }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return Var::make(std::move(out), {a, b}, [](detail::Node& node) {
    node.inputs[0]->accumulate(node.grad);
    node.inputs[1]->accumulate(node.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](detail::Node& node) {
    node.inputs[0]->accumulate(node.grad);
    if (node.inputs[1]->requires_grad) {
      double* db = node.inputs[1]->grad_buffer().ptr();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) db[i] -= node.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](detail::Node& node) {
    detail::Node& na = *node.inputs[0];
    detail::Node& nb = *node.inputs[1];
    if (na.requires_grad) {
      double* d = na.grad_buffer().ptr();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) d[i] += node.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      double* d = nb.grad_buffer().ptr();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) d[i] += node.grad[i] * na.value[i];
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return Var::make(std::move(out), {x}, [s](detail::Node& node) {
    double* d = node.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < node.grad.numel(); ++i) d[i] += s * node.grad[i];
  });
}

Var shift_scale(const Var& x, double shift, double mult) {
  Tensor out = x.value();
  for (double& v : out.data()) v = (v - shift) * mult;
  return Var::make(std::move(out), {x}, [mult](detail::Node& node) {
    Tensor g = node.grad;
    for (double& v : g.data()) v *= mult;
    node.inputs[0]->accumulate(g);
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return Var::make(Tensor::scalar(total), {x}, [](detail::Node& node) {
    double* d = node.inputs[0]->grad_buffer().ptr();
    const double g = node.grad[0];
    for (std::size_t i = 0; i < node.inputs[0]->value.numel(); ++i) d[i] += g;
  });
}

Var mean(const Var& x) {
  require(x.numel() > 0, "mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {x}, [](detail::Node& node) { node.inputs[0]->accumulate(node.grad); });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), "concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    require(p.shape().size() == ref.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      require(d == axis || p.shape()[d] == ref[d],
              "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref) + " off axis");
    out_shape[axis] += p.shape()[axis];
    extents.push_back(p.shape()[axis]);
  }
  const AxisSplit s = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].value().ptr();
    const std::size_t chunk = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src + o * chunk, chunk, out.ptr() + o * s.extent * s.inner + offset * s.inner);
    offset += extents[k];
  }
  return Var::make(std::move(out), parts, [s, extents](detail::Node& node) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      detail::Node& in = *node.inputs[k];
      const std::size_t chunk = extents[k] * s.inner;
      if (in.requires_grad) {
        double* d = in.grad_buffer().ptr();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* g = node.grad.ptr() + o * s.extent * s.inner + off * s.inner;
          for (std::size_t i = 0; i < chunk; ++i) d[o * chunk + i] += g[i];
        }
      }
      off += extents[k];
    }
  });
}

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  require(weight.dim(1) == in, "linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                   shape_str(x.shape()));
  if (bias) require(bias->value().rank() == 1 && bias->dim(0) == out_dim, "linear: bias must have shape (out)");
  Tensor y({rows, out_dim});
  const auto sin = static_cast<std::ptrdiff_t>(in);
  const auto sout = static_cast<std::ptrdiff_t>(out_dim);
  kernels::gemm(rows, out_dim, in, MatRef{x.value().ptr(), sin, 1}, MatRef{weight.value().ptr(), 1, sin}, y.ptr(), sout,
                false);
  if (bias)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) y.at(r, j) += bias->value()[j];
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return Var::make(std::move(y), std::move(inputs), [=](detail::Node& node) {
    detail::Node& nx = *node.inputs[0];
    detail::Node& nw = *node.inputs[1];
    const double* dy = node.grad.ptr();
    if (nx.requires_grad)
      kernels::gemm(rows, in, out_dim, MatRef{dy, sout, 1}, MatRef{nw.value.ptr(), sin, 1}, nx.grad_buffer().ptr(), sin,
                    true);
    if (nw.requires_grad)
      kernels::gemm(out_dim, in, rows, MatRef{dy, 1, sout}, MatRef{nx.value.ptr(), sin, 1}, nw.grad_buffer().ptr(), sin,
                    true);
    if (has_bias && node.inputs[2]->requires_grad) {
      double* db = node.inputs[2]->grad_buffer().ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) db[j] += dy[r * out_dim + j];
    }
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  require((transpose_b ? b.dim(1) : b.dim(0)) == k,
          "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto sk = static_cast<std::ptrdiff_t>(k);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  // B as a (k x n) view regardless of storage.
  const MatRef bview = transpose_b ? MatRef{b.value().ptr(), 1, sk} : MatRef{b.value().ptr(), sn, 1};
  Tensor y({m, n});
  kernels::gemm(m, n, k, MatRef{a.value().ptr(), sk, 1}, bview, y.ptr(), sn, false);
  return Var::make(std::move(y), {a, b}, [=](detail::Node& node) {
    detail::Node& na = *node.inputs[0];
    detail::Node& nb = *node.inputs[1];
    const double* dy = node.grad.ptr();
    if (na.requires_grad) {
      // dA (m x k) = dY (m x n) * B^T
      const MatRef bT = transpose_b ? MatRef{nb.value.ptr(), sk, 1} : MatRef{nb.value.ptr(), 1, sn};
      kernels::gemm(m, k, n, MatRef{dy, sn, 1}, bT, na.grad_buffer().ptr(), sk, true);
    }
    if (nb.requires_grad) {
      if (transpose_b) {
        // dB (n x k) = dY^T * A
        kernels::gemm(n, k, m, MatRef{dy, 1, sn}, MatRef{na.value.ptr(), sk, 1}, nb.grad_buffer().ptr(), sk, true);
      } else {
        // dB (k x n) = A^T * dY
        kernels::gemm(k, n, m, MatRef{na.value.ptr(), 1, sk}, MatRef{dy, sn, 1}, nb.grad_buffer().ptr(), sn, true);
      }
    }
  });
}

constexpr std::size_t kTinyMatmul = 4096;

// y (m x n) = a (m x k) * b, b stored (k x n) or, transposed, (n x k).
void small_matmul(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, bool tb, double* y) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < k; ++q) s += a[i * k + q] * (tb ? b[j * k + q] : b[q * n + j]);
      y[i * n + j] = s;
    }
}

void small_matmul_backward(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, bool tb,
                           const double* dy, double* da, double* db) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dy[i * n + j];
      for (std::size_t q = 0; q < k; ++q) {
        const std::size_t bi = tb ? j * k + q : q * n + j;
        if (da) da[i * k + q] += g * b[bi];
        if (db) db[bi] += g * a[i * k + q];
      }
    }
}

Var batched_matmul(const Var& a, const Var& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  require(b.dim(0) == bs && (transpose_b ? b.dim(2) : b.dim(1)) == k,
          "batched_matmul: shapes disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto sk = static_cast<std::ptrdiff_t>(k);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  // Attention-sized slices: kernel dispatch would cost more than the arithmetic.
  const bool tiny = m * n * k <= kTinyMatmul;
  Tensor y({bs, m, n});
  for (std::size_t p = 0; p < bs; ++p) {
    const double* ap = a.value().ptr() + p * m * k;
    const double* bp = b.value().ptr() + p * k * n;
    double* yp = y.ptr() + p * m * n;
    if (tiny) {
      small_matmul(m, n, k, ap, bp, transpose_b, yp);
      continue;
    }
    const MatRef bview = transpose_b ? MatRef{bp, 1, sk} : MatRef{bp, sn, 1};
    kernels::gemm(m, n, k, MatRef{ap, sk, 1}, bview, yp, sn, false);
  }
  return Var::make(std::move(y), {a, b}, [=](detail::Node& node) {
    detail::Node& na = *node.inputs[0];
    detail::Node& nb = *node.inputs[1];
    if (tiny) {
      double* da = na.requires_grad ? na.grad_buffer().ptr() : nullptr;
      double* db = nb.requires_grad ? nb.grad_buffer().ptr() : nullptr;
      for (std::size_t p = 0; p < bs; ++p)
        small_matmul_backward(m, n, k, na.value.ptr() + p * m * k, nb.value.ptr() + p * k * n, transpose_b,
                              node.grad.ptr() + p * m * n, da ? da + p * m * k : nullptr, db ? db + p * k * n : nullptr);
      return;
    }
    for (std::size_t p = 0; p < bs; ++p) {
      const double* dy = node.grad.ptr() + p * m * n;
      const double* ap = na.value.ptr() + p * m * k;
      const double* bp = nb.value.ptr() + p * k * n;
      if (na.requires_grad) {
        const MatRef bT = transpose_b ? MatRef{bp, sk, 1} : MatRef{bp, 1, sn};
        kernels::gemm(m, k, n, MatRef{dy, sn, 1}, bT, na.grad_buffer().ptr() + p * m * k, sk, true);
      }
      if (nb.requires_grad) {
        double* db = nb.grad_buffer().ptr() + p * k * n;
        if (transpose_b)
          kernels::gemm(n, k, m, MatRef{dy, 1, sn}, MatRef{ap, sk, 1}, db, sk, true);
        else
          kernels::gemm(k, n, m, MatRef{ap, 1, sk}, MatRef{dy, sn, 1}, db, sn, true);
      }
    }
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.value().rank();
  require(axes.size() == rank, "permute: need one axis per dimension");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    require(a < rank && !seen[a], "permute: axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  // src[j] = flat input index of output element j.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t j = 0; j < src.size(); ++j) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_stride[axes[i]];
    src[j] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor y(out_shape);
  for (std::size_t j = 0; j < src.size(); ++j) y[j] = x.value()[src[j]];
  return Var::make(std::move(y), {x}, [src = std::move(src)](detail::Node& node) {
    double* dx = node.inputs[0]->grad_buffer().ptr();
    for (std::size_t j = 0; j < src.size(); ++j) dx[src[j]] += node.grad[j];
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require(x.defined() && x.value().rank() >= 1, "layer_norm: empty input");
  const std::size_t d = x.shape().back();
  require(gamma.numel() == d && beta.numel() == d, "layer_norm: gamma/beta must match the last dimension");
  const std::size_t rows = x.numel() / d;
  Tensor y = Tensor::like(x.value());
  Tensor xhat = Tensor::like(x.value());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      y[r * d + j] = gamma.value()[j] * xhat[r * d + j] + beta.value()[j];
    }
  }
  return Var::make(std::move(y), {x, gamma, beta},
                   [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& node) {
                     detail::Node& nx = *node.inputs[0];
                     detail::Node& ng = *node.inputs[1];
                     detail::Node& nb = *node.inputs[2];
                     const double* dy = node.grad.ptr();
                     if (ng.requires_grad || nb.requires_grad) {
                       double* dg = ng.grad_buffer().ptr();
                       double* dbeta = nb.grad_buffer().ptr();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) {
                           dg[j] += dy[r * d + j] * xhat[r * d + j];
                           dbeta[j] += dy[r * d + j];
                         }
                     }
                     if (!nx.requires_grad) return;
                     double* dx = nx.grad_buffer().ptr();
                     const double dd = static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double g = dy[r * d + j] * ng.value[j];
                         s1 += g;
                         s2 += g * xhat[r * d + j];
                       }
                       for (std::size_t j = 0; j < d; ++j) {
                         const double g = dy[r * d + j] * ng.value[j];
                         dx[r * d + j] += inv_std[r] / dd * (dd * g - s1 - xhat[r * d + j] * s2);
                       }
                     }
                   });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
                 double momentum, double eps) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.numel() == c && beta.numel() == c, "batch_norm2d: gamma/beta must have one entry per channel");
  if (state.running_mean.numel() != c) state.running_mean = Tensor({c}, 0.0);
  if (state.running_var.numel() != c) state.running_var = Tensor({c}, 1.0);
  const double count = static_cast<double>(n * hw);
  std::vector<double> mu(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.value().ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.value().ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1.0 ? v / (count - 1.0) : var;
      state.running_mean[ch] = (1.0 - momentum) * state.running_mean[ch] + momentum * m;
      state.running_var[ch] = (1.0 - momentum) * state.running_var[ch] + momentum * unbiased;
    } else {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
    }
  }
  Tensor y = Tensor::like(x.value());
  Tensor xhat = Tensor::like(x.value());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x.value()[off + i] - mu[ch]) * inv_std[ch];
        y[off + i] = gamma.value()[ch] * xhat[off + i] + beta.value()[ch];
      }
    }
  return Var::make(std::move(y), {x, gamma, beta},
                   [n, c, hw, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& node) {
                     detail::Node& nx = *node.inputs[0];
                     detail::Node& ng = *node.inputs[1];
                     detail::Node& nb = *node.inputs[2];
                     const double* dy = node.grad.ptr();
                     std::vector<double> sdy(c, 0.0), sdyx(c, 0.0);
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t off = (b * c + ch) * hw;
                         for (std::size_t i = 0; i < hw; ++i) {
                           sdy[ch] += dy[off + i];
                           sdyx[ch] += dy[off + i] * xhat[off + i];
                         }
                       }
                     if (ng.requires_grad || nb.requires_grad) {
                       double* dg = ng.grad_buffer().ptr();
                       double* dbeta = nb.grad_buffer().ptr();
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         dg[ch] += sdyx[ch];
                         dbeta[ch] += sdy[ch];
                       }
                     }
                     if (!nx.requires_grad) return;
                     double* dx = nx.grad_buffer().ptr();
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t off = (b * c + ch) * hw;
                         const double k = ng.value[ch] * inv_std[ch];
                         for (std::size_t i = 0; i < hw; ++i) {
                           if (training)
                             dx[off + i] += k / count * (count * dy[off + i] - sdy[ch] - xhat[off + i] * sdyx[ch]);
                           else
                             dx[off + i] += k * dy[off + i];
                         }
                       }
                   });
}

}  // namespace mgf
