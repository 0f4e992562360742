#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mvil {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first touched by backward
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array of doubles, optionally participating in a reverse-mode graph.
///
/// Tensor is a cheap handle: copies share the same storage. Every operation below
/// returns a fresh tensor and never mutates its inputs' values. When any input
/// requires a gradient, the result records its parents and a backward rule; that
/// chain of records is the graph that backward() replays.
///
/// Leaf tensors created with requires_grad=true are parameters. Their gradients
/// accumulate across backward() calls until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Row-major 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    /// Rows/cols of a rank-2 tensor. A rank-1 tensor is treated as one row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    /// Direct write access, intended for parameter initialization and optimizer updates.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Copy of the values as a new leaf, detached from any graph.
    Tensor detach(bool requires_grad = false) const;

    bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

    // Used by the operation implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Populate d(loss)/d(leaf) for every requires_grad leaf reachable from `loss`.
/// Intermediate gradients are recomputed each call; leaf gradients accumulate.
/// Throws ContractError unless loss holds exactly one element.
void backward(const Tensor& loss);

// --- primitive operations -------------------------------------------------

/// [m x k] . [k x n] -> [m x n]. ShapeError names both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// Elementwise sum of identically shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product of identically shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// X[n x d] + b[d], b added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// X[n x d] + b[n], b[i] added to every entry of row i.
Tensor add_col_bias(const Tensor& x, const Tensor& bias);

/// Exact GeLU: x * Phi(x) with the erf-based Gaussian CDF.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Row-wise softmax with max subtraction. NumericError on NaN input.
Tensor softmax_rows(const Tensor& x);
/// Per-row standardization over columns, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rows [begin, end) as a new [end-begin x cols] tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Table[V x d] gathered at ids -> [len(ids) x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Multiply row i by keep[i] (0 or 1); gradients of dropped rows are zero.
Tensor mask_rows(const Tensor& x, const std::vector<bool>& keep);
/// Mean over the rows where keep[i] is true -> [1 x d].
Tensor mean_rows(const Tensor& x, const std::vector<bool>& keep);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean softmax cross-entropy over rows whose target is not `ignore_index`.
/// ContractError if every row is ignored.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, int ignore_index = -1);
/// Sum over entries of sigmoid binary cross-entropy against targets in [0, 1].
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

// Scalar helpers.
double gelu_value(double x);
double gaussian_cdf(double x);

}  // namespace mvil
