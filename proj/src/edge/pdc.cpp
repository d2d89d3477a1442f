#include "mgf/edge/pdc.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace mgf::edge {

namespace {

// One term of the linear map: vanilla[dst] += coef * pdc[src].
struct Term {
  std::size_t dst;
  std::size_t src;
  double coef;
};

int sgn(int v) { return (v > 0) - (v < 0); }

std::vector<Term> build_terms(PdcKind kind) {
  std::vector<Term> terms;
  switch (kind) {
    case PdcKind::vanilla:
      for (std::size_t i = 0; i < 9; ++i) terms.push_back({i, i, 1.0});
      break;
    case PdcKind::cpdc:
      // sum_i w_i (x_i - x_c): centre collects -sum of all taps.
      for (std::size_t i = 0; i < 9; ++i) {
        terms.push_back({i, i, 1.0});
        terms.push_back({4, i, -1.0});
      }
      break;
    case PdcKind::apdc:
      // sum_i w_i (x_ring[i] - x_ring[i+1]); the centre tap does not participate.
      for (std::size_t i = 0; i < 8; ++i) {
        const auto tap = static_cast<std::size_t>(kRing3[i][0] * 3 + kRing3[i][1]);
        const auto next = static_cast<std::size_t>(kRing3[(i + 1) % 8][0] * 3 + kRing3[(i + 1) % 8][1]);
        terms.push_back({tap, tap, 1.0});
        terms.push_back({next, tap, -1.0});
      }
      break;
    case PdcKind::rpdc:
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
          if (r != 0 && r != 4 && c != 0 && c != 4) continue;
          const auto outer = static_cast<std::size_t>(r * 5 + c);
          const auto inner = static_cast<std::size_t>((2 + sgn(r - 2)) * 5 + (2 + sgn(c - 2)));
          terms.push_back({outer, outer, 1.0});
          terms.push_back({inner, outer, -1.0});
        }
      break;
  }
  return terms;
}

const std::vector<Term>& terms_for(PdcKind kind) {
  static const std::vector<Term> table[4] = {build_terms(PdcKind::vanilla), build_terms(PdcKind::cpdc),
                                             build_terms(PdcKind::apdc), build_terms(PdcKind::rpdc)};
  return table[static_cast<int>(kind)];
}

void check_shape(PdcKind kind, const Shape& s) {
  const std::size_t k = pdc_kernel_size(kind);
  if (s.size() != 4 || s[2] != k || s[3] != k)
    throw std::invalid_argument("pdc_to_vanilla: " + std::string(pdc_name(kind)) + " expects a (out, in, " +
                                std::to_string(k) + ", " + std::to_string(k) + ") kernel, got " + shape_str(s));
}

}  // namespace

std::size_t pdc_kernel_size(PdcKind kind) { return kind == PdcKind::rpdc ? 5 : 3; }

std::string_view pdc_name(PdcKind kind) {
  switch (kind) {
    case PdcKind::vanilla: return "vanilla";
    case PdcKind::cpdc: return "cpdc";
    case PdcKind::apdc: return "apdc";
    case PdcKind::rpdc: return "rpdc";
  }
  return "?";
}

PdcKind parse_pdc_kind(std::string_view name) {
  for (PdcKind k : {PdcKind::vanilla, PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc})
    if (pdc_name(k) == name) return k;
  throw std::invalid_argument("unknown pixel-difference kind '" + std::string(name) + "'");
}

Tensor pdc_to_vanilla(PdcKind kind, const Tensor& weight) {
  check_shape(kind, weight.shape());
  const std::size_t taps = weight.dim(2) * weight.dim(3);
  const std::size_t planes = weight.numel() / taps;
  const auto& terms = terms_for(kind);
  Tensor out = Tensor::like(weight);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = weight.ptr() + p * taps;
    double* dst = out.ptr() + p * taps;
    for (const Term& t : terms) dst[t.dst] += t.coef * src[t.src];
  }
  return out;
}

Var pdc_to_vanilla(PdcKind kind, const Var& weight) {
  Tensor out = pdc_to_vanilla(kind, weight.value());
  return Var::make(std::move(out), {weight}, [kind](detail::Node& node) {
    detail::Node& in = *node.inputs[0];
    const std::size_t taps = in.value.dim(2) * in.value.dim(3);
    const std::size_t planes = in.value.numel() / taps;
    const auto& terms = terms_for(kind);
    double* dw = in.grad_buffer().ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      const double* g = node.grad.ptr() + p * taps;
      for (const Term& t : terms) dw[p * taps + t.src] += t.coef * g[t.dst];
    }
  });
}

Var pdc_conv2d(const Var& x, const Var& weight, PdcKind kind, std::size_t groups) {
  const std::size_t k = pdc_kernel_size(kind);
  return conv2d(pad_replicate(x, k / 2), pdc_to_vanilla(kind, weight), std::nullopt, {.groups = groups});
}

}  // namespace mgf::edge
