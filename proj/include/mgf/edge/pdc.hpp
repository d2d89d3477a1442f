#pragma once

#include <string_view>

#include "mgf/autograd.hpp"
#include "mgf/ops.hpp"

namespace mgf::edge {

/// Pixel-difference convolution variants.
///  - cpdc: every tap sees (x_i - x_center)
///  - apdc: every ring tap of a 3x3 window sees (x_i - x_clockwise(i))
///  - rpdc: every outer tap of a 5x5 window sees (x_outer - x_inner), the inner tap being
///    one step toward the centre along each non-zero axis
enum class PdcKind { vanilla, cpdc, apdc, rpdc };

std::size_t pdc_kernel_size(PdcKind kind);
std::string_view pdc_name(PdcKind kind);
PdcKind parse_pdc_kind(std::string_view name);

/// Clockwise ring order of a 3x3 window as (row, col), starting top-left.
inline constexpr int kRing3[8][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}, {1, 0}};

/// Rewrites a (out, in, k, k) pixel-difference kernel as the vanilla kernel that
/// produces the same response. The map is linear in the weights.
Tensor pdc_to_vanilla(PdcKind kind, const Tensor& weight);
/// Differentiable form; gradients flow back through the transpose of the same linear map.
Var pdc_to_vanilla(PdcKind kind, const Var& weight);

/// Pixel-difference convolution with "same" output size. The border is replicate-padded so
/// flat regions respond with zero everywhere, edges of the image included.
Var pdc_conv2d(const Var& x, const Var& weight, PdcKind kind, std::size_t groups = 1);

}  // namespace mgf::edge
