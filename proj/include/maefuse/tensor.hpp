#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "maefuse/errors.hpp"
#include "maefuse/rng.hpp"

namespace maefuse {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline std::vector<long> row_major_strides(const Shape& s) {
    std::vector<long> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// One node of the dynamically built computation graph. Ops fill `backward`
// with a closure that reads this node's grad and accumulates into the
// parents' grads. The closure captures parent nodes by shared_ptr (never the
// node itself, which would leak the graph).
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until the node participates in a backward pass
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    long numel() const { return static_cast<long>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
    for (const T& x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value in forward output");
        }
    }
}

// Value-semantics handle to a graph node. Copies share the node.
template <typename T>
class TensorT {
public:
    using value_type = T;
    using Node = TensorNode<T>;

    TensorT() = default;

    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static TensorT full(Shape shape, T v) {
        auto n = std::make_shared<Node>();
        n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
        n->shape = std::move(shape);
        return TensorT(std::move(n));
    }

    static TensorT from(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != static_cast<long>(data.size())) {
            throw ContractError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                                std::to_string(data.size()) + " values");
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return TensorT(std::move(n));
    }

    static TensorT scalar(T v) { return from({1}, {v}); }

    static TensorT randn(Shape shape, Rng& rng, double sigma = 1.0, double mean = 0.0) {
        auto t = zeros(std::move(shape));
        for (T& x : t.data()) x = static_cast<T>(rng.normal(mean, sigma));
        return t;
    }

    bool defined() const { return n_ != nullptr; }

    const Shape& shape() const { return node_ref().shape; }
    long numel() const { return node_ref().numel(); }
    long dim(int i) const { return node_ref().shape.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(node_ref().shape.size()); }

    std::vector<T>& data() { return node_ref().value; }
    const std::vector<T>& data() const { return node_ref().value; }

    T item() const {
        if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " values");
        return node_ref().value[0];
    }

    T at(std::initializer_list<long> idx) const {
        const auto st = row_major_strides(shape());
        long off = 0;
        size_t i = 0;
        for (long v : idx) off += v * st[i++];
        return node_ref().value[static_cast<size_t>(off)];
    }

    bool requires_grad() const { return n_ && n_->requires_grad; }

    TensorT& set_requires_grad(bool b) {
        node_ref().requires_grad = b;
        return *this;
    }

    bool has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

    std::vector<T>& grad() {
        if (!has_grad()) throw ContractError("grad(): no gradient present");
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw ContractError("grad(): no gradient present");
        return n_->grad;
    }

    void zero_grad() {
        if (n_) n_->grad.clear();
    }

    // Reverse-mode pass from a scalar root. Gradients accumulate into every
    // reachable node with requires_grad set.
    void backward() const {
        if (!n_) throw ContractError("backward(): undefined tensor");
        if (n_->numel() != 1) {
            throw ContractError("backward(): root must be scalar, got shape " + shape_str(n_->shape));
        }
        std::vector<Node*> order;
        topo_sort(n_.get(), order);
        n_->ensure_grad();
        n_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backward && node->requires_grad) node->backward(*node);
        }
    }

    std::shared_ptr<Node> node() const { return n_; }

private:
    explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    Node& node_ref() const {
        if (!n_) throw ContractError("use of undefined tensor");
        return *n_;
    }

    static void topo_sort(Node* root, std::vector<Node*>& order) {
        // Iterative post-order DFS; deep graphs would overflow a recursive one.
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> n_;
};

using Tensor = TensorT<float>;

// Non-differentiable precision cast (used by the gradient-check harness).
template <typename U, typename T>
TensorT<U> cast(const TensorT<T>& t) {
    std::vector<U> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(t.data()[i]);
    return TensorT<U>::from(t.shape(), std::move(out));
}

namespace detail {

// Attaches graph metadata to a freshly computed op output.
template <typename T>
void wire(TensorT<T>& out, const char* op, std::vector<TensorT<T>> inputs,
          std::function<void(TensorNode<T>&)> backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    check_finite(op, out.data());
    if (!needs) return;
    auto n = out.node();
    n->requires_grad = true;
    n->op = op;
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
}

} // namespace detail

} // namespace maefuse
