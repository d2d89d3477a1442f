#pragma once

// Differentiable ops over Var. Image tensors are (N, C, H, W); matrices are (rows, cols).
// Shape violations throw std::invalid_argument.

#include <optional>
#include <vector>

#include "mgf/autograd.hpp"

namespace mgf {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

std::size_t conv_out_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// Cross-correlation with zero padding. weight: (out_ch, in_ch / groups, kh, kw); bias: (out_ch).
Var conv2d(const Var& input, const Var& weight, const std::optional<Var>& bias, const Conv2dOptions& opt = {});

/// Half-pixel-centre bilinear resampling of (N, C, H, W) to (N, C, out_h, out_w).
Var bilinear_resize(const Var& input, std::size_t out_h, std::size_t out_w);

/// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
Var max_pool2x2(const Var& input);

/// Pads H and W by `pad` on every side, copying the nearest edge pixel.
Var pad_replicate(const Var& input, std::size_t pad);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// Softmax along `axis` (negative values count from the back).
Var softmax(const Var& x, int axis = -1);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
/// (x - shift) * mult elementwise.
Var shift_scale(const Var& x, double shift, double mult);
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Concatenation along `axis` of tensors that agree on every other extent.
Var concat(const std::vector<Var>& parts, std::size_t axis);

/// y = x W^T + b, x: (rows, in), W: (out, in), b: (out).
Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias);
/// (m, k) x (k, n). With transpose_b the second operand is (n, k).
Var matmul(const Var& a, const Var& b, bool transpose_b = false);

/// Per-batch (B, m, k) x (B, k, n); with transpose_b the second operand is (B, n, k).
Var batched_matmul(const Var& a, const Var& b, bool transpose_b = false);
/// Reorders axes: output axis i is input axis `axes[i]`.
Var permute(const Var& x, const std::vector<std::size_t>& axes);

/// Normalizes each row of the last dimension; gamma, beta: (last_dim).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel batch normalization of (N, C, H, W). In training mode batch statistics
/// are used and the running estimates are updated with `momentum`.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
                 double momentum = 0.1, double eps = 1e-5);

}  // namespace mgf
