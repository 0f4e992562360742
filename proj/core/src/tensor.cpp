#include "mvil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include <fmt/format.h>

#include "mvil/errors.hpp"

namespace mvil {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError(fmt::format("shape {} holds {} values, got {}", shape_to_string(shape),
                                     shape_numel(shape), values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

// Result of an operation. Records parents and the backward rule only when a
// gradient can flow.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    auto node = make_node(std::move(shape), std::move(values), needs);
    node->is_leaf = false;
    if (needs) {
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(fmt::format("{}: undefined tensor", op));
}

void require_matrix(const Tensor& t, const char* op) {
    require_defined(t, op);
    if (t.rank() != 2) {
        throw ShapeError(fmt::format("{}: expected a matrix, got shape {}", op, shape_to_string(t.shape())));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    if (a.shape() != b.shape()) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
    }
}

bool grad_wanted(const NodePtr& p) { return p->requires_grad; }

// C[m x n] += A[m x k] * B[k x n], accumulating over k in increasing order.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a[i * k + t];
            const double* brow = b + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B^T where B is [n x k].
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[j * k + t];
            c[i * n + j] += acc;
        }
    }
}

// C[m x n] += A^T * B where A is [k x m], B is [k x n].
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t t = 0; t < k; ++t) {
        const double* arow = a + t * m;
        const double* brow = b + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_node({}, {value}, requires_grad));
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::numel() const { return values().size(); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() == 2) return s[0];
    if (s.size() == 1) return 1;
    throw ShapeError(fmt::format("rows(): unsupported shape {}", shape_to_string(s)));
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 2) return s[1];
    if (s.size() == 1) return s[0];
    throw ShapeError(fmt::format("cols(): unsupported shape {}", shape_to_string(s)));
}

std::span<const double> Tensor::values() const {
    require_defined(*this, "values");
    return node_->values;
}

std::span<double> Tensor::mutable_values() {
    require_defined(*this, "mutable_values");
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError(fmt::format("item(): tensor of shape {} is not a scalar", shape_to_string(shape())));
    return node_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->is_leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    require_defined(*this, "grad");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    require_defined(*this, "mutable_grad");
    return node_->ensure_grad();
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
    return from(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

// --- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw ContractError(fmt::format("backward: loss must be a scalar, got shape {}", shape_to_string(loss.shape())));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) {
        if (!node->is_leaf) node->grad.assign(node->values.size(), 0.0);
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
    }
}

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError(fmt::format("matmul: inner dimensions disagree, {} x {}", shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
        if (grad_wanted(an)) gemm_nt(self.grad.data(), bn->values.data(), an->ensure_grad().data(), m, n, k);
        if (grad_wanted(bn)) gemm_tn(an->values.data(), self.grad.data(), bn->ensure_grad().data(), k, m, n);
    });
}

Tensor transpose(const Tensor& x) {
    require_matrix(x, "transpose");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    auto v = x.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
    auto xn = x.node();
    return make_result({c, r}, std::move(out), {x}, [xn, r, c](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        for (const auto& p : {an, bn}) {
            if (!grad_wanted(p)) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (grad_wanted(an)) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->values[i];
        }
        if (grad_wanted(bn)) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->values[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    require_defined(x, "scale");
    auto v = x.values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * factor;
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn, factor](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_row_bias");
    require_defined(bias, "add_row_bias");
    const std::size_t r = x.rows(), c = x.cols();
    if (bias.numel() != c) {
        throw ShapeError(fmt::format("add_row_bias: bias {} does not match {} columns of {}",
                                     shape_to_string(bias.shape()), c, shape_to_string(x.shape())));
    }
    auto xv = x.values(), bv = bias.values();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
    auto xn = x.node(), bn = bias.node();
    return make_result(x.shape(), std::move(out), {x, bias}, [xn, bn, r, c](Node& self) {
        if (grad_wanted(xn)) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (grad_wanted(bn)) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
}

Tensor add_col_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_col_bias");
    require_defined(bias, "add_col_bias");
    const std::size_t r = x.rows(), c = x.cols();
    if (bias.numel() != r) {
        throw ShapeError(fmt::format("add_col_bias: bias {} does not match {} rows of {}",
                                     shape_to_string(bias.shape()), r, shape_to_string(x.shape())));
    }
    auto xv = x.values(), bv = bias.values();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[i];
    auto xn = x.node(), bn = bias.node();
    return make_result(x.shape(), std::move(out), {x, bias}, [xn, bn, r, c](Node& self) {
        if (grad_wanted(xn)) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (grad_wanted(bn)) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j];
        }
    });
}

double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gelu_value(double x) { return x * gaussian_cdf(x); }

Tensor gelu(const Tensor& x) {
    require_defined(x, "gelu");
    auto v = x.values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(v[i]);
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double z = xn->values[i];
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
            g[i] += self.grad[i] * (gaussian_cdf(z) + z * pdf);
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    require_defined(x, "sigmoid");
    auto v = x.values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = v[i];
        out[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    auto xn = x.node();
    return make_result(x.shape(), out, {x}, [xn, out](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i] * (1.0 - out[i]);
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    const std::size_t r = x.rows(), c = x.cols();
    auto v = x.values();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = v.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (std::isnan(row[j])) throw NumericError(fmt::format("softmax_rows: NaN in row {}", i));
            mx = std::max(mx, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += (out[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    auto xn = x.node();
    return make_result(x.shape(), out, {x}, [xn, out, r, c](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * out[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += out[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix(x, "layer_norm");
    require_defined(gamma, "layer_norm");
    require_defined(beta, "layer_norm");
    const std::size_t r = x.rows(), c = x.cols();
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError(fmt::format("layer_norm: gamma {} / beta {} do not match width {}",
                                     shape_to_string(gamma.shape()), shape_to_string(beta.shape()), c));
    }
    auto v = x.values(), gv = gamma.values(), bv = beta.values();
    std::vector<double> xhat(r * c), inv_std(r), out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = v.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mu) * inv_std[i];
            out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
        const auto& dy = self.grad;
        if (grad_wanted(gn)) {
            auto& g = gn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * xhat[i * c + j];
        }
        if (grad_wanted(bn)) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
        }
        if (grad_wanted(xn)) {
            auto& g = xn->ensure_grad();
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t i = 0; i < r; ++i) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = dy[i * c + j] * gn->values[j];
                    mean_d += d;
                    mean_dx += d * xhat[i * c + j];
                }
                mean_d *= inv_c;
                mean_dx *= inv_c;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = dy[i * c + j] * gn->values[j];
                    g[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
                }
            }
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    std::vector<double> out;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        require_defined(p, "concat_rows");
        if (p.cols() != c) {
            throw ShapeError(fmt::format("concat_rows: width {} vs {}", shape_to_string(p.shape()), c));
        }
        r += p.rows();
        out.insert(out.end(), p.values().begin(), p.values().end());
        nodes.push_back(p.node());
    }
    return make_result({r, c}, std::move(out), parts, [nodes](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : nodes) {
            const std::size_t len = p->values.size();
            if (grad_wanted(p)) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
            }
            offset += len;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.rows() != r) {
            throw ShapeError(fmt::format("concat_cols: height {} vs {}", shape_to_string(p.shape()), r));
        }
        widths.push_back(p.cols());
        c += p.cols();
        nodes.push_back(p.node());
    }
    std::vector<double> out(r * c);
    std::size_t col0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto v = parts[k].values();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out[i * c + col0 + j] = v[i * widths[k] + j];
        col0 += widths[k];
    }
    return make_result({r, c}, std::move(out), parts, [nodes, widths, r, c](Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (grad_wanted(nodes[k])) {
                auto& g = nodes[k]->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * c + col + j];
            }
            col += widths[k];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw ShapeError(fmt::format("slice_rows: [{}, {}) out of range for {}", begin, end, shape_to_string(x.shape())));
    }
    const std::size_t c = x.cols();
    auto v = x.values();
    std::vector<double> out(v.begin() + begin * c, v.begin() + end * c);
    auto xn = x.node();
    return make_result({end - begin, c}, std::move(out), {x}, [xn, begin, c](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_matrix(table, "embedding");
    const std::size_t vocab = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    auto v = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw VocabularyError(fmt::format("embedding: id {} at position {} outside vocabulary of {}", ids[i], i, vocab));
        }
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto tn = table.node();
    std::vector<int> idv(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {table}, [tn, idv = std::move(idv), d](Node& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < idv.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idv[i]) * d + j] += self.grad[i * d + j];
    });
}

Tensor mask_rows(const Tensor& x, const std::vector<bool>& keep) {
    require_matrix(x, "mask_rows");
    const std::size_t r = x.rows(), c = x.cols();
    if (keep.size() != r) throw ShapeError(fmt::format("mask_rows: mask of {} for {} rows", keep.size(), r));
    auto v = x.values();
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        if (keep[i]) std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn, keep, c](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < keep.size(); ++i)
            if (keep[i])
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j];
    });
}

Tensor mean_rows(const Tensor& x, const std::vector<bool>& keep) {
    require_matrix(x, "mean_rows");
    const std::size_t r = x.rows(), c = x.cols();
    if (keep.size() != r) throw ShapeError(fmt::format("mean_rows: mask of {} for {} rows", keep.size(), r));
    const auto count = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
    if (count == 0) throw ContractError("mean_rows: no rows selected");
    auto v = x.values();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        if (keep[i])
            for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& o : out) o *= inv;
    auto xn = x.node();
    return make_result({1, c}, std::move(out), {x}, [xn, keep, c, inv](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < keep.size(); ++i)
            if (keep[i])
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
    });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double total = 0.0;
    for (double v : x.values()) total += v;
    auto xn = x.node();
    return make_result({}, {total}, {x}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        for (auto& gi : g) gi += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, int ignore_index) {
    require_matrix(logits, "cross_entropy_rows");
    const std::size_t r = logits.rows(), c = logits.cols();
    if (targets.size() != r) {
        throw ShapeError(fmt::format("cross_entropy_rows: {} targets for logits {}", targets.size(), shape_to_string(logits.shape())));
    }
    auto v = logits.values();
    std::vector<double> probs(r * c, 0.0);
    std::vector<int> tv(targets.begin(), targets.end());
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (tv[i] == ignore_index) continue;
        if (tv[i] < 0 || static_cast<std::size_t>(tv[i]) >= c) {
            throw VocabularyError(fmt::format("cross_entropy_rows: target {} outside {} classes", tv[i], c));
        }
        const double* row = v.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
        total += log_z - row[tv[i]];
        ++count;
    }
    if (count == 0) throw ContractError("cross_entropy_rows: every position is ignored");
    const double inv = 1.0 / static_cast<double>(count);
    auto ln = logits.node();
    return make_result({}, {total * inv}, {logits},
                       [ln, probs = std::move(probs), tv = std::move(tv), ignore_index, c, inv](Node& self) {
        auto& g = ln->ensure_grad();
        const double up = self.grad[0] * inv;
        for (std::size_t i = 0; i < tv.size(); ++i) {
            if (tv[i] == ignore_index) continue;
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += up * probs[i * c + j];
            g[i * c + static_cast<std::size_t>(tv[i])] -= up;
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
    require_defined(logits, "bce_with_logits");
    if (targets.size() != logits.numel()) {
        throw ShapeError(fmt::format("bce_with_logits: {} targets for logits {}", targets.size(), shape_to_string(logits.shape())));
    }
    auto v = logits.values();
    std::vector<double> sig(v.size());
    std::vector<double> tv(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double z = v[i];
        if (std::isnan(z)) throw NumericError("bce_with_logits: NaN logit");
        total += std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
        sig[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    auto ln = logits.node();
    return make_result({}, {total}, {logits}, [ln, sig = std::move(sig), tv = std::move(tv)](Node& self) {
        auto& g = ln->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (sig[i] - tv[i]);
    });
}

}  // namespace mvil
