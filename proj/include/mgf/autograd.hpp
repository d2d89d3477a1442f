#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mgf/tensor.hpp"

namespace mgf {

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();  // allocates zeros on first use
};
}  // namespace detail

/// A tensor recorded on the gradient tape. Copies share the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// In-place access for parameter updates and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds the result of an op. The backward closure receives the result node and must
  /// push gradients into input nodes through Node::accumulate / grad_buffer.
  static Var make(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a single-element loss. Accumulates into every reachable
/// node that requires grad; repeated calls add up until zero_grad.
void backward(const Var& loss);

/// Disables tape recording in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace mgf
