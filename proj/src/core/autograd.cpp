#include "mgf/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace mgf {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace detail {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::like(value);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (g.numel() != value.numel()) throw std::logic_error("autograd: gradient size mismatch");
  if (grad.empty()) {
    grad = g.reshaped(value.shape());
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

}  // namespace detail

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward_fn = std::move(backward);
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a single-element tensor, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Release intermediate gradients; only leaves keep theirs.
  for (detail::Node* node : order)
    if (node->backward_fn) node->grad = Tensor();
}

}  // namespace mgf
