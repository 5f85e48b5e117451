#pragma once

// Reverse-mode differentiable 4-D tensor.
//
// A Tensor is a shared handle to a graph node. Nodes produced by operations keep
// references to their inputs and a backward rule; leaves (parameters or inputs
// created through the factories) do not. Calling backward() on a scalar walks the
// recorded graph once in reverse topological order, accumulates gradients into
// every leaf that requires them, and then releases the graph. A graph can only be
// differentiated once.

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "alen/error.hpp"

namespace alen {

struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr std::array<std::size_t, 4> dims() const noexcept { return {n, c, h, w}; }
    constexpr std::size_t index(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const noexcept {
        return ((in * c + ic) * h + ih) * w + iw;
    }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

template <std::floating_point T>
struct Node;

template <std::floating_point T>
using NodePtr = std::shared_ptr<Node<T>>;

template <std::floating_point T>
struct Node {
    const char* op = "leaf";
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::vector<NodePtr<T>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(const Node&)> backward_fn;

    bool is_leaf() const noexcept { return !backward_fn && inputs.empty(); }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

namespace debug {

/// Test hook: when set to an op name, the gradient flowing into that op's
/// backward rule is scaled by 1.05. Used as a negative control for gradient checks.
inline std::string& perturbed_backward_op() {
    static std::string name;
    return name;
}

} // namespace debug

template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(shape, T(0), requires_grad); }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        return from_data(shape, std::vector<T>(shape.numel(), value), requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape.numel())
            throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape.str());
        auto node = std::make_shared<Node<T>>();
        node->shape = shape;
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({1, 1, 1, 1}, {value}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->shape.numel(); }
    const char* op() const { return node_->op; }

    std::span<const T> data() const { return node_->data; }

    /// In-place access for leaves (optimizer updates, test fixtures).
    std::span<T> mutable_data() const {
        if (!node_->is_leaf()) throw UsageError("mutable_data on a non-leaf tensor produced by " + std::string(op()));
        return node_->data;
    }

    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return node_->data[node_->shape.index(n, c, h, w)];
    }

    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() const { return node_->ensure_grad(); }
    void zero_grad() const { node_->grad.clear(); }

    /// Leaf copy with no graph history.
    Tensor detach(bool requires_grad = false) const { return from_data(shape(), node_->data, requires_grad); }

    template <std::floating_point U>
    Tensor<U> cast(bool requires_grad = false) const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>::from_data(shape(), std::move(out), requires_grad);
    }

    const NodePtr<T>& node() const { return node_; }

    void backward() const;

private:
    NodePtr<T> node_;
};

/// Creates an op result. The backward rule is only recorded when some input
/// requires a gradient.
template <std::floating_point T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                      std::function<void(const Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    node->shape = shape;
    node->data = std::move(data);
    bool needs = false;
    for (const auto& in : inputs) {
        if (in->consumed) throw UsageError(std::string("op ") + op + " received a tensor from a consumed graph");
        needs = needs || in->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template <std::floating_point T>
void Tensor<T>::backward() const {
    if (!node_) throw UsageError("backward on an undefined tensor");
    if (numel() != 1) throw UsageError("backward requires a scalar loss, got shape " + shape().str());
    if (node_->consumed) throw UsageError("backward called twice on the same graph; re-run forward first");
    if (!node_->requires_grad) throw UsageError("backward on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (next < cur->inputs.size()) {
            Node<T>* child = cur->inputs[next++].get();
            if (child->consumed) throw UsageError("backward reached a node from an already differentiated graph");
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += T(1);
    const std::string& perturbed = debug::perturbed_backward_op();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward_fn || n->grad.empty()) continue;
        if (!perturbed.empty() && perturbed == n->op)
            for (auto& g : n->grad) g *= T(1.05);
        n->backward_fn(*n);
    }

    for (Node<T>* n : order) {
        if (n->is_leaf()) continue;
        n->consumed = true;
        n->backward_fn = nullptr;
        n->inputs.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

} // namespace alen
