#pragma once
// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// Graphs are recorded define-by-run: every op whose inputs require gradients
// returns a tensor holding its parents and a backward closure. backward() on a
// scalar walks that tape once in reverse topological order and then releases
// it, so a tensor can be backpropagated through at most once.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace popmap::nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient flows in
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::span<double> ensure_grad();
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Backpropagates from this scalar and frees the recorded graph.
  void backward();

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// True while graph recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
/// Builds an op result; records parents and the closure only when some parent needs a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Tensor::Node&)> backward_fn);
}  // namespace detail

}  // namespace popmap::nd
