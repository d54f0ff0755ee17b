#pragma once

// NCHW tensors recorded on an implicit tape. Each op output keeps shared
// handles to the inputs it needs for its backward pass; backward() walks the
// resulting DAG in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace derain::nn {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return from(s, std::vector<T>(s.size(), T(0)), requires_grad);
  }

  static Tensor from(Shape s, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != s.size()) throw std::invalid_argument("tensor size/shape mismatch");
    auto node = std::make_shared<Node<T>>();
    node->shape = s;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradients are accumulated through const handles: the tape owns them.
  std::span<T> grad() const { return node_->grad_buffer(); }
  void zero_grad() const { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }

  T item() const {
    if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return node_->value[0];
  }

  /// Same values, cut off from the tape.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Back-propagates from this scalar into every reachable tensor that
  /// requires a gradient.
  void backward() {
    if (size() != 1) throw std::logic_error("backward() needs a scalar");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward(**it);
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Output node for an op over `inputs`. The backward closure is attached only
/// when some input needs a gradient.
template <class T>
Tensor<T> make_result(Shape s, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  for (const T& v : values)
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node<T>>();
  node->shape = s;
  node->value = std::move(values);
  for (const auto& in : inputs)
    if (in.requires_grad()) {
      node->requires_grad = true;
      node->parents.push_back(in.node());
    }
  if (node->requires_grad) node->backward = std::move(backward);
  return Tensor<T>(std::move(node));
}

}  // namespace derain::nn
