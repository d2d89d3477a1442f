#pragma once

#include <span>

#include "mgf/autograd.hpp"
#include "mgf/image.hpp"

namespace mgf {

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kBceClamp = 1e-7;

/// 1 - (2 sum(pq) + eps) / (sum(p^2) + sum(q^2) + eps), evaluated per leading-axis sample
/// and averaged. pred and target share a shape whose first extent is the batch.
Var dice_loss(const Var& pred, const Tensor& target);
/// -mean(y log x + (1 - y) log(1 - x)) with x clamped to [1e-7, 1 - 1e-7].
Var bce_loss(const Var& pred, const Tensor& target);
/// mean((pred - target)^2).
Var mse_loss(const Var& pred, const Tensor& target);

// Plain-value forms over maps and lists.
double dice_coefficient(const ProbMap& pred, const BinaryMask& target);
double dice_loss(const ProbMap& pred, const BinaryMask& target);
double bce_loss(const ProbMap& pred, const BinaryMask& target);
double mse_loss(std::span<const double> pred, std::span<const double> target);

Tensor to_tensor(const Grid<double>& img);
Tensor to_tensor(const BinaryMask& mask);

}  // namespace mgf
