#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tensor is a shared handle to a graph node: copying a Tensor aliases the
// same storage (use clone() for a deep copy). Operations record their parents
// and a backward rule only when some parent requires a gradient, so inference
// on frozen weights builds no graph at all.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "autofas/error.hpp"

namespace autofas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                                 std::to_string(values.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        const auto n = v.size();
        return Tensor({n}, std::move(v), requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(v), requires_grad);
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> values_mut() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    double item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    /// Leaf with copied values and no history.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }
    /// Deep copy preserving requires_grad.
    Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

    /// Reverse sweep from a single-element root. Leaf grads accumulate.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

   private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                      std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const auto& p : parents) {
        if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

inline Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                      std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const auto& p : parents) {
        if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

inline void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

inline void require_vector(const Tensor& a, const char* op) {
    if (a.rank() != 1 && !(a.rank() == 2 && a.shape()[0] == 1)) {
        throw DimensionError(std::string(op) + ": expected a vector, got " + shape_str(a.shape()));
    }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace detail

inline void Tensor::backward() const {
    if (size() != 1) throw DimensionError("backward() needs a single-element root, got " + shape_str(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS restricted to nodes that carry gradients.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (node->backward_fn) node->grad.assign(node->value.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// Operations

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " disagree");
    }
    std::vector<double> out(m * n);
    detail::MutMap(out.data(), m, n).noalias() =
        detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
    return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        detail::ConstMap dc(self.grad.data(), m, n);
        if (pa.requires_grad) {
            pa.ensure_grad();
            detail::MutMap(pa.grad.data(), m, k).noalias() += dc * detail::ConstMap(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            detail::MutMap(pb.grad.data(), k, n).noalias() += detail::ConstMap(pa.value.data(), m, k).transpose() * dc;
        }
    });
}

namespace detail {

// Elementwise binary op over equal shapes; da/db give local partials.
template <typename F, typename DA, typename DB>
Tensor zip(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
    require_same_shape(a, b, name);
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_op(a.shape(), std::move(out), {a, b}, [da, db](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * da(pa.value[i], pb.value[i]);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * db(pa.value[i], pb.value[i]);
        }
    });
}

// Elementwise unary op; d(x, y) is the local derivative given input x and output y.
template <typename F, typename D>
Tensor map(const Tensor& a, F f, D d) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [d](Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * d(pa.value[i], self.value[i]);
    });
}

inline double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::zip(a, b, "add", std::plus<>(), [](double, double) { return 1.0; },
                       [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::zip(a, b, "sub", std::minus<>(), [](double, double) { return 1.0; },
                       [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::zip(a, b, "mul", std::multiplies<>(), [](double, double y) { return y; },
                       [](double x, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::zip(a, b, "div", std::divides<>(), [](double, double y) { return 1.0 / y; },
                       [](double x, double y) { return -x / (y * y); });
}
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

inline Tensor scale(const Tensor& a, double c) {
    return detail::map(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Tensor relu(const Tensor& a) {
    return detail::map(a, [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
    return detail::map(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Tensor square(const Tensor& a) {
    return detail::map(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// s * a for a single-element s.
inline Tensor scale_by(const Tensor& s, const Tensor& a) {
    if (s.size() != 1) throw DimensionError("scale_by: scale must have one element, got " + shape_str(s.shape()));
    const double c = s.item();
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= c;
    return detail::make_op(a.shape(), std::move(out), {s, a}, [](detail::Node& self) {
        auto& ps = *self.parents[0];
        auto& pa = *self.parents[1];
        if (ps.requires_grad) {
            ps.ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
            ps.grad[0] += acc;
        }
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double c = ps.value[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * c;
        }
    });
}

/// Adds a length-n bias to every row of a B x n matrix.
inline Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
    detail::require_matrix(a, "add_row_bias");
    const auto rows = a.shape()[0], cols = a.shape()[1];
    if (bias.size() != cols) {
        throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                             shape_str(a.shape()));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
    return detail::make_op(a.shape(), std::move(out), {a, bias}, [rows, cols](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) pb.grad[c] += self.grad[r * cols + c];
        }
    });
}

inline Tensor sum(const Tensor& a) {
    const auto av = a.values();
    const double total = std::accumulate(av.begin(), av.end(), 0.0);
    return detail::make_op({}, {total}, {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (auto& g : pa.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return detail::make_op(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

/// Row i of a matrix as a vector.
inline Tensor row(const Tensor& m, std::size_t i) {
    detail::require_matrix(m, "row");
    const auto cols = m.shape()[1];
    if (i >= m.shape()[0]) throw DimensionError("row: index " + std::to_string(i) + " out of " + shape_str(m.shape()));
    std::vector<double> out(m.values().begin() + static_cast<std::ptrdiff_t>(i * cols),
                            m.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
    return detail::make_op({cols}, std::move(out), {m}, [i, cols](detail::Node& self) {
        auto& pm = *self.parents[0];
        pm.ensure_grad();
        for (std::size_t c = 0; c < cols; ++c) pm.grad[i * cols + c] += self.grad[c];
    });
}

/// Selected entries of a flat tensor, as a vector.
inline Tensor gather(const Tensor& v, std::vector<std::size_t> index) {
    std::vector<double> out(index.size());
    for (std::size_t j = 0; j < index.size(); ++j) {
        if (index[j] >= v.size()) throw DimensionError("gather: index " + std::to_string(index[j]) + " out of range");
        out[j] = v[index[j]];
    }
    const auto n = index.size();
    return detail::make_op({n}, std::move(out), {v}, [index = std::move(index)](detail::Node& self) {
        auto& pv = *self.parents[0];
        pv.ensure_grad();
        for (std::size_t j = 0; j < index.size(); ++j) pv.grad[index[j]] += self.grad[j];
    });
}

/// Single entry i of a flat tensor, as a scalar.
inline Tensor pick(const Tensor& v, std::size_t i) { return reshape(gather(v, {i}), {}); }

/// Single-element tensors stacked into a vector.
inline Tensor stack(const std::vector<Tensor>& scalars) {
    std::vector<double> out;
    out.reserve(scalars.size());
    for (const auto& s : scalars) {
        if (s.size() != 1) throw DimensionError("stack: element of shape " + shape_str(s.shape()));
        out.push_back(s.item());
    }
    return detail::make_op({scalars.size()}, std::move(out), scalars, [](detail::Node& self) {
        for (std::size_t j = 0; j < self.parents.size(); ++j) {
            auto& p = *self.parents[j];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            p.grad[0] += self.grad[j];
        }
    });
}

/// Maximum entry; the gradient goes to the lowest index achieving it.
inline Tensor max(const Tensor& v) {
    if (v.size() == 0) throw DimensionError("max: empty tensor");
    const auto vals = v.values();
    const auto best = static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    return detail::make_op({}, {vals[best]}, {v}, [best](detail::Node& self) {
        auto& pv = *self.parents[0];
        pv.ensure_grad();
        pv.grad[best] += self.grad[0];
    });
}

/// Softmax of a vector, stabilized by max subtraction.
inline Tensor softmax(const Tensor& x) {
    detail::require_vector(x, "softmax");
    const auto xv = x.values();
    if (xv.empty()) throw DimensionError("softmax: empty input");
    for (double v : xv) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    const double top = *std::max_element(xv.begin(), xv.end());
    std::vector<double> out(xv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) total += out[i] = std::exp(xv[i] - top);
    for (auto& v : out) v /= total;
    return detail::make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
        for (std::size_t i = 0; i < self.value.size(); ++i)
            px.grad[i] += self.value[i] * (self.grad[i] - dot);
    });
}

/// Mean binary cross-entropy of logits against {0,1} labels, in log space.
inline Tensor binary_cross_entropy(const Tensor& logits, std::span<const double> labels) {
    if (logits.size() != labels.size()) {
        throw DimensionError("binary_cross_entropy: " + std::to_string(logits.size()) + " logits vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw DimensionError("binary_cross_entropy: empty batch");
    const auto z = logits.values();
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0) throw ParameterError("binary_cross_entropy: labels must be 0 or 1");
        total += detail::softplus(z[i]) - labels[i] * z[i];
    }
    const auto n = static_cast<double>(z.size());
    std::vector<double> y(labels.begin(), labels.end());
    return detail::make_op({}, {total / n}, {logits}, [y = std::move(y), n](detail::Node& self) {
        auto& pz = *self.parents[0];
        pz.ensure_grad();
        for (std::size_t i = 0; i < y.size(); ++i)
            pz.grad[i] += self.grad[0] * (detail::stable_sigmoid(pz.value[i]) - y[i]) / n;
    });
}

/// Embedding lookup for several categorical columns, concatenated per row.
///
/// `ids` is a row-major batch x num_columns table of category ids; table j
/// (vocab x dim_j) is looked up with column `columns[j]`. Output is
/// batch x sum(dim_j).
inline Tensor gather_concat(const std::vector<Tensor>& tables, std::span<const std::uint32_t> ids,
                            std::size_t num_columns, std::span<const std::size_t> columns) {
    if (tables.size() != columns.size()) throw DimensionError("gather_concat: tables and columns differ in count");
    if (num_columns == 0 || ids.size() % num_columns != 0) throw DimensionError("gather_concat: ragged id table");
    const std::size_t batch = ids.size() / num_columns;
    std::vector<std::size_t> offsets{0};
    for (const auto& t : tables) {
        detail::require_matrix(t, "gather_concat");
        offsets.push_back(offsets.back() + t.shape()[1]);
    }
    const std::size_t width = offsets.back();
    std::vector<double> out(batch * width);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < tables.size(); ++j) {
            const auto id = ids[b * num_columns + columns[j]];
            const auto vocab = tables[j].shape()[0], dim = tables[j].shape()[1];
            if (id >= vocab) {
                throw LookupError("embedding id " + std::to_string(id) + " out of vocabulary " + std::to_string(vocab) +
                                  " (column " + std::to_string(columns[j]) + ")");
            }
            std::copy_n(tables[j].values().begin() + static_cast<std::ptrdiff_t>(id * dim), dim,
                        out.begin() + static_cast<std::ptrdiff_t>(b * width + offsets[j]));
        }
    }
    std::vector<std::uint32_t> saved(ids.begin(), ids.end());
    std::vector<std::size_t> cols(columns.begin(), columns.end());
    return detail::make_op({batch, width}, std::move(out), tables,
                           [saved = std::move(saved), cols = std::move(cols), offsets, num_columns, batch,
                            width](detail::Node& self) {
                               for (std::size_t j = 0; j < self.parents.size(); ++j) {
                                   auto& table = *self.parents[j];
                                   if (!table.requires_grad) continue;
                                   table.ensure_grad();
                                   const auto dim = table.shape[1];
                                   for (std::size_t b = 0; b < batch; ++b) {
                                       const auto id = saved[b * num_columns + cols[j]];
                                       for (std::size_t d = 0; d < dim; ++d)
                                           table.grad[id * dim + d] += self.grad[b * width + offsets[j] + d];
                                   }
                               }
                           });
}

/// Multiplies each feature's column block of `x` by a binary gate.
///
/// `gates` holds gate_rows x num_features values with gate_rows either 1
/// (shared by the batch) or batch. Feature f owns columns
/// [offsets[f], offsets[f+1]). The gate's gradient is passed straight
/// through to `theta`: d out / d theta_f is taken as d out / d gate_f, i.e.
/// the unmasked block values.
inline Tensor feature_mask(const Tensor& x, const Tensor& theta, std::span<const double> gates,
                           std::size_t gate_rows, std::span<const std::size_t> offsets) {
    detail::require_matrix(x, "feature_mask");
    const auto batch = x.shape()[0], width = x.shape()[1];
    const auto m = theta.size();
    if (offsets.size() != m + 1 || offsets.back() != width) {
        throw DimensionError("feature_mask: block offsets do not cover " + shape_str(x.shape()));
    }
    if ((gate_rows != 1 && gate_rows != batch) || gates.size() != gate_rows * m) {
        throw DimensionError("feature_mask: gate table does not match batch and feature count");
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t b = 0; b < batch; ++b) {
        const auto g = gates.subspan((gate_rows == 1 ? 0 : b) * m, m);
        for (std::size_t f = 0; f < m; ++f)
            for (std::size_t c = offsets[f]; c < offsets[f + 1]; ++c) out[b * width + c] *= g[f];
    }
    std::vector<double> g(gates.begin(), gates.end());
    std::vector<std::size_t> offs(offsets.begin(), offsets.end());
    return detail::make_op(x.shape(), std::move(out), {x, theta},
                           [g = std::move(g), offs = std::move(offs), gate_rows, batch, width, m](detail::Node& self) {
                               auto& px = *self.parents[0];
                               auto& pt = *self.parents[1];
                               if (px.requires_grad) px.ensure_grad();
                               if (pt.requires_grad) pt.ensure_grad();
                               for (std::size_t b = 0; b < batch; ++b) {
                                   const double* gb = g.data() + (gate_rows == 1 ? 0 : b) * m;
                                   for (std::size_t f = 0; f < m; ++f) {
                                       double acc = 0.0;
                                       for (std::size_t c = offs[f]; c < offs[f + 1]; ++c) {
                                           const auto i = b * width + c;
                                           if (px.requires_grad) px.grad[i] += self.grad[i] * gb[f];
                                           acc += self.grad[i] * px.value[i];
                                       }
                                       if (pt.requires_grad) pt.grad[f] += acc;
                                   }
                               }
                           });
}

// ---------------------------------------------------------------------------
// Finite-difference checking

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for the scalar f() with respect to every tensor in `params`. Parameters are
/// perturbed in place and restored.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-5) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ParameterError("grad_check: eps must lie in (0, 1e-2]");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    const Tensor y = f();
    if (!std::isfinite(y.item())) throw NumericError("grad_check: f is not finite at the point");
    y.backward();

    double worst = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.values_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = f().item();
            values[i] = saved - eps;
            const double down = f().item();
            values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: f is not finite near the point");
            const double numeric = (up - down) / (2.0 * eps);
            worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
        }
    }
    return worst;
}

/// Single-input convenience form: checks f at a copy of `point`.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps = 1e-5) {
    Tensor x = point.clone();
    return grad_check([&] { return f(x); }, {x}, eps);
}

}  // namespace autofas
