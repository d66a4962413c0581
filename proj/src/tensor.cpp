#include "popmap/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "popmap/error.hpp"

namespace popmap::nd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "," : "") << shape[i];
  }
  out << ']';
  return out.str();
}

std::span<double> Tensor::Node::ensure_grad() {
  if (grad.empty()) {
    grad.assign(data.size(), 0.0);
  }
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(nd::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (nd::numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void Tensor::backward() {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar, got " + to_string(shape()));
  }
  if (!requires_grad()) {
    throw StateError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
  }
  for (Node* node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Tensor::Node&)> backward_fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) {
    return out;
  }
  bool needs = false;
  for (const Tensor& p : parents) {
    needs = needs || (p.defined() && p.requires_grad());
  }
  if (!needs) {
    return out;
  }
  Tensor::Node& node = out.node();
  node.requires_grad = true;
  for (const Tensor& p : parents) {
    if (p.defined()) {
      node.parents.push_back(p.node_ptr());
    }
  }
  node.backward_fn = std::move(backward_fn);
  return out;
}

}  // namespace detail

}  // namespace popmap::nd
