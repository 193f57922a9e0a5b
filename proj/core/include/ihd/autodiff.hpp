#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ihd/array.hpp"
#include "ihd/rng.hpp"

namespace ihd {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. `value` is fixed at creation;
// `grad`, when present, always matches its shape. Graph construction and
// backward are single-threaded; creation ids give the deterministic
// accumulation order.
struct Node {
    DenseArray value;
    DenseArray grad;  // empty until backward reaches this node
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_rule;  // reads this->grad, accumulates into parents
    std::uint64_t id = 0;
    const char* op = "leaf";

    void accumulate(const DenseArray& g);
    void accumulate(DenseArray&& g);
    void clear_grad();
};

// Leaf constructors.
NodePtr constant(DenseArray value);
NodePtr parameter(DenseArray value);
NodePtr make_node(DenseArray value, std::vector<NodePtr> parents, const char* op);

// ---- operations ----

// [m x k] * [k x n] -> [m x n]
NodePtr matmul(const NodePtr& a, const NodePtr& b);
// [B x m x k] * [B x k x n] -> [B x m x n]
NodePtr bmm(const NodePtr& a, const NodePtr& b);
// Right-aligned broadcasting add (extents equal or 1).
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double c);
NodePtr reshape(const NodePtr& a, Shape shape);
NodePtr permute(const NodePtr& a, std::vector<std::size_t> axes);
// 2-D row gather; rows may repeat. Backward scatter-adds.
NodePtr gather_rows(const NodePtr& table, std::vector<std::size_t> rows);
// Flat element gather into an arbitrary output shape.
NodePtr gather(const NodePtr& x, std::vector<std::size_t> indices, Shape out_shape);
NodePtr softmax(const NodePtr& x, std::size_t axis);
// Normalizes the last axis to mean 0 / variance 1 (eps added to the
// variance), then applies the elementwise affine gain/bias.
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps = 1e-5);
// Exact erf-based Gaussian error linear unit.
NodePtr gelu(const NodePtr& x);
NodePtr mean_axis(const NodePtr& x, std::size_t axis);
NodePtr sum_all(const NodePtr& x);
// Class-weighted binary cross-entropy on logits, log-sum-exp stable form.
// logits/targets are [N x C] (or [C]); weights has length C. Per-class
// weights are normalized by their sum, then averaged over rows.
NodePtr bce_with_logits(const NodePtr& logits, const DenseArray& targets,
                        const std::vector<double>& class_weights);

// Reverse pass from a scalar root. Gradients accumulate in reverse
// creation-index order; leaves keep their grads until cleared.
void backward(const NodePtr& root);

// p <- p - lr * grad for every parameter that received a gradient.
void sgd_update(const std::vector<NodePtr>& params, double lr);

// ---- verification harness ----

struct GradCheckReport {
    bool passed = true;
    std::size_t checked = 0;
    double worst_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::string to_string() const;
};

// Compares analytic gradients of `build_loss` against central differences
// over up to `max_coords` randomly sampled parameter coordinates.
// Failures are reported, not raised.
GradCheckReport grad_check(const std::function<NodePtr()>& build_loss,
                           const std::vector<std::pair<std::string, NodePtr>>& params, double h,
                           double tol, std::size_t max_coords, Rng& rng);

}  // namespace ihd
