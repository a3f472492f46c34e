#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tiergan/tensor.hpp"

namespace tiergan {

// One recorded computation. Nodes form an acyclic graph built during the
// forward pass; backward() walks it in reverse topological order.
template <typename T>
class Node {
public:
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    std::string op;                // primitive identifier, e.g. "conv2d"
    std::string name;              // parameter name for trainable leaves
    bool trainable = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads (pre-zeroed).
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (!grad) grad.emplace(value.shape);
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_node(std::string op, Tensor<T> value, std::vector<NodePtr<T>> parents = {},
                     std::function<void(Node<T>&)> backward = nullptr) {
    auto n = std::make_shared<Node<T>>();
    n->op = std::move(op);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
    return n;
}

// Leaf holding data that does not receive parameter updates.
template <typename T>
NodePtr<T> constant(Tensor<T> value) {
    return make_node<T>("const", std::move(value));
}

// Trainable leaf.
template <typename T>
NodePtr<T> param(Tensor<T> value, std::string name = "") {
    auto n = make_node<T>("param", std::move(value));
    n->trainable = true;
    n->name = std::move(name);
    return n;
}

namespace debug {
// Test fixture: when set, the incoming gradient of every node whose op matches
// is scaled by 1.5 before propagation, so finite-difference checks attribute
// the fault to that primitive.
inline std::string corrupt_backward_op{};
} // namespace debug

namespace detail {

template <typename T>
void topo_order(Node<T>* root, std::vector<Node<T>*>& order) {
    // Iterative post-order DFS; recursion would overflow on deep graphs.
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

} // namespace detail

// Reverse-mode sweep from a scalar root. Every node reachable from the root
// ends up with a populated grad; fan-out accumulates by summation.
template <typename T>
void backward(const NodePtr<T>& root) {
    if (!root) throw Error("backward: null root");
    if (root->value.size() != 1)
        throw ShapeError("backward: root must be scalar, got shape " + shape_str(root->value.shape));
    std::vector<Node<T>*> order;
    detail::topo_order(root.get(), order);
    for (Node<T>* n : order) {
        n->grad.emplace(n->value.shape); // zero-initialized
    }
    (*root->grad)[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!debug::corrupt_backward_op.empty() && n->op == debug::corrupt_backward_op)
            for (T& g : n->grad->data) g *= T(1.5);
        if (n->backward_fn) n->backward_fn(*n);
    }
}

} // namespace tiergan
