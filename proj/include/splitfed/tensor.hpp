#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace splitfed {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when an operation produces (or is handed) a NaN/Inf value while
/// finite checks are enabled. Carries the name of the offending op or
/// parameter so the caller can report where training blew up.
struct nonfinite_error : std::runtime_error {
    nonfinite_error(std::string where_, const std::string& what)
        : std::runtime_error(what), where(std::move(where_)) {}
    std::string where;
};

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // null for leaves

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline thread_local bool g_grad_enabled = true;
inline thread_local bool g_finite_checks = true;

}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }
inline bool finite_checks_enabled() { return detail::g_finite_checks; }

/// Disables graph construction for its scope (evaluation passes).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Disables finite-value checks for its scope. Used when evaluating a
/// possibly diverged model for reporting: NaNs then flow into losses and
/// predictions instead of aborting, which is exactly what gets reported.
struct AnalysisModeGuard {
    AnalysisModeGuard() : prev_(detail::g_finite_checks) { detail::g_finite_checks = false; }
    ~AnalysisModeGuard() { detail::g_finite_checks = prev_; }
    AnalysisModeGuard(const AnalysisModeGuard&) = delete;
    AnalysisModeGuard& operator=(const AnalysisModeGuard&) = delete;

private:
    bool prev_;
};

inline void guard_finite(const char* where, const std::vector<double>& values) {
    if (!detail::g_finite_checks) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw nonfinite_error(where, std::string(where) + ": non-finite value at flat index " +
                                             std::to_string(i));
        }
    }
}

/// Dense n-dimensional array of f64 in row-major order, optionally
/// participating in a reverse-mode autodiff graph. Copies are shallow
/// (shared storage); use clone() for an independent leaf.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.node_->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.node_->data) v = value;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) {
            throw std::logic_error("tensor has no gradient populated");
        }
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    }

    double item() const {
        if (node_->data.size() != 1) {
            throw shape_error("item() requires a scalar tensor, got shape " + shape_str(node_->shape));
        }
        return node_->data[0];
    }

    /// Deep copy of the values as an independent leaf (no graph linkage).
    Tensor clone(bool requires_grad = false) const {
        return from_data(node_->shape, node_->data, requires_grad);
    }

    bool is_leaf() const { return !node_->backward_fn; }

    void backward() const;
    void backward(const std::vector<double>& cotangent) const;

    detail::TensorNode& node() const { return *node_; }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// The autodiff graph reachable from one root, materialized in topological
/// order (every node's inputs precede it). The backward pass walks the
/// order once, in reverse, accumulating parent gradients additively.
class Graph {
public:
    static Graph from_root(const Tensor& root) {
        Graph g;
        std::unordered_set<const detail::TensorNode*> visited;
        // Iterative post-order DFS; child visit order is the recorded parent
        // order, so the topological order (and hence every gradient
        // accumulation order) is deterministic.
        struct Frame {
            std::shared_ptr<detail::TensorNode> node;
            std::size_t next_parent = 0;
        };
        std::vector<Frame> stack;
        if (root.node_ptr()) stack.push_back({root.node_ptr()});
        while (!stack.empty()) {
            Frame& frame = stack.back();
            if (frame.next_parent == 0 && visited.count(frame.node.get())) {
                stack.pop_back();
                continue;
            }
            if (frame.next_parent < frame.node->parents.size()) {
                auto parent = frame.node->parents[frame.next_parent++];
                if (!visited.count(parent.get())) stack.push_back({parent});
            } else {
                visited.insert(frame.node.get());
                g.nodes_.push_back(frame.node);
                stack.pop_back();
            }
        }
        return g;
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// Seeds the root gradient and propagates through the whole graph.
    /// Each node's backward function runs exactly once.
    void run_backward(const Tensor& root, const std::vector<double>& cotangent) {
        if (cotangent.size() != root.data().size()) {
            throw shape_error("cotangent length " + std::to_string(cotangent.size()) +
                              " does not match root size " + std::to_string(root.data().size()));
        }
        auto& root_node = root.node();
        root_node.ensure_grad();
        for (std::size_t i = 0; i < cotangent.size(); ++i) root_node.grad[i] += cotangent[i];
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            detail::TensorNode& node = **it;
            if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
        }
    }

private:
    std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
};

inline void Tensor::backward() const {
    if (size() != 1) {
        throw shape_error("backward() requires a scalar root, got shape " + shape_str(shape()));
    }
    Graph::from_root(*this).run_backward(*this, {1.0});
}

inline void Tensor::backward(const std::vector<double>& cotangent) const {
    Graph::from_root(*this).run_backward(*this, cotangent);
}

}  // namespace splitfed
