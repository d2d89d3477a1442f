#include "mgf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mgf {

namespace {

void require_match(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Var dice_loss(const Var& pred, const Tensor& target) {
  require_match(pred.shape(), target.shape(), "dice_loss");
  const std::size_t batch = pred.value().rank() > 1 ? pred.dim(0) : 1;
  const std::size_t per = pred.numel() / batch;
  std::vector<double> inter(batch), denom(batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double i = 0.0, pp = 0.0, qq = 0.0;
    for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
      const double p = pred.value()[k], q = target[k];
      i += p * q;
      pp += p * p;
      qq += q * q;
    }
    inter[b] = 2.0 * i + kDiceSmooth;
    denom[b] = pp + qq + kDiceSmooth;
    total += 1.0 - inter[b] / denom[b];
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return Var::make(Tensor::scalar(total * inv_batch), {pred},
                   [target, batch, per, inter, denom, inv_batch](detail::Node& node) {
                     detail::Node& in = *node.inputs[0];
                     double* dp = in.grad_buffer().ptr();
                     const double g = node.grad[0] * inv_batch;
                     for (std::size_t b = 0; b < batch; ++b) {
                       const double d2 = denom[b] * denom[b];
                       for (std::size_t k = b * per; k < (b + 1) * per; ++k)
                         dp[k] -= g * (2.0 * target[k] * denom[b] - inter[b] * 2.0 * in.value[k]) / d2;
                     }
                   });
}

Var bce_loss(const Var& pred, const Tensor& target) {
  require_match(pred.shape(), target.shape(), "bce_loss");
  const std::size_t n = pred.numel();
  if (n == 0) throw std::invalid_argument("bce_loss: empty input");
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = std::clamp(pred.value()[k], kBceClamp, 1.0 - kBceClamp);
    const double y = target[k];
    total += y * std::log(x) + (1.0 - y) * std::log(1.0 - x);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Var::make(Tensor::scalar(-total * inv_n), {pred}, [target, inv_n](detail::Node& node) {
    detail::Node& in = *node.inputs[0];
    double* dp = in.grad_buffer().ptr();
    const double g = node.grad[0] * inv_n;
    for (std::size_t k = 0; k < in.value.numel(); ++k) {
      const double x = in.value[k];
      if (x < kBceClamp || x > 1.0 - kBceClamp) continue;
      const double y = target[k];
      dp[k] -= g * (y / x - (1.0 - y) / (1.0 - x));
    }
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  require_match(pred.shape(), target.shape(), "mse_loss");
  const std::size_t n = pred.numel();
  if (n == 0) throw std::invalid_argument("mse_loss: empty input");
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = pred.value()[k] - target[k];
    total += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Var::make(Tensor::scalar(total * inv_n), {pred}, [target, inv_n](detail::Node& node) {
    detail::Node& in = *node.inputs[0];
    double* dp = in.grad_buffer().ptr();
    const double g = node.grad[0] * inv_n;
    for (std::size_t k = 0; k < in.value.numel(); ++k) dp[k] += g * 2.0 * (in.value[k] - target[k]);
  });
}

double dice_coefficient(const ProbMap& pred, const BinaryMask& target) {
  require_same_size(pred, target, "dice_loss");
  double i = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double p = pred[k], q = target[k] ? 1.0 : 0.0;
    i += p * q;
    pp += p * p;
    qq += q * q;
  }
  return (2.0 * i + kDiceSmooth) / (pp + qq + kDiceSmooth);
}

double dice_loss(const ProbMap& pred, const BinaryMask& target) { return 1.0 - dice_coefficient(pred, target); }

double bce_loss(const ProbMap& pred, const BinaryMask& target) {
  require_same_size(pred, target, "bce_loss");
  if (pred.empty()) throw std::invalid_argument("bce_loss: empty input");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double x = std::clamp(pred[k], kBceClamp, 1.0 - kBceClamp);
    total += target[k] ? std::log(x) : std::log(1.0 - x);
  }
  return -total / static_cast<double>(pred.size());
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("mse_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) total += (pred[k] - target[k]) * (pred[k] - target[k]);
  return total / static_cast<double>(pred.size());
}

Tensor to_tensor(const Grid<double>& img) {
  return Tensor({1, 1, img.height(), img.width()}, img.data());
}

Tensor to_tensor(const BinaryMask& mask) {
  Tensor t({1, 1, mask.height(), mask.width()});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask[i] ? 1.0 : 0.0;
  return t;
}

}  // namespace mgf
