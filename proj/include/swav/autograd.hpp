#pragma once

// Minimal reverse-mode differentiation over dense double matrices. Each op
// records a closure that pushes its output gradient into its parents; leaf
// nodes (parameters) accumulate gradients across calls to backward().

#include "swav/matrix.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace swav::ag {

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Mat& ensure_grad();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var leaf(Mat value, bool requires_grad);
    static Var constant(Mat value) { return leaf(std::move(value), false); }

    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    Mat& ensure_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    bool valid() const { return node_ != nullptr; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// a (m x n) plus row vector r (1 x n) broadcast over rows.
Var add_row(const Var& a, const Var& r);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var scale(const Var& a, double s);
/// Row g of the result is the mean of `table` rows listed in groups[g].
Var gather_mean(const Var& table, const std::vector<std::vector<int>>& groups);
Var gather_rows(const Var& table, const std::vector<int>& rows);
Var concat_rows(const std::vector<Var>& parts);
Var select_row(const Var& a, std::size_t r);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
/// tanh-approximated GELU.
Var gelu(const Var& x);
/// Multi-head scaled dot-product self-attention core; keys with
/// key_mask[j] == 0 receive zero weight. Returns (L x d).
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const std::vector<char>& key_mask);
/// Two-or-more-class cross-entropy of a 1 x C logit row; returns 1 x 1.
Var cross_entropy(const Var& logits, std::size_t target);
/// a + w * b for same-shape inputs.
Var axpy(const Var& a, const Var& b, double w);

/// Seeds d(loss) = 1 and propagates to every node that requires a gradient.
void backward(const Var& loss);

}  // namespace swav::ag
