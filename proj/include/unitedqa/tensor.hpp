#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace unitedqa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace detail {

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddConst,
    SubScalar,
    Exp,
    Log,
    Sqrt,
    Relu,
    Tanh,
    MatMul,
    MatMulNT,
    Softmax,
    LogSoftmax,
    ReduceSum,
    ReduceMax,
    Gather,
    Pick,
    Concat,
    Slice,
    AddRows,
    LayerNorm,
    Reshape,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddConst: return "add_const";
        case OpKind::SubScalar: return "sub_scalar";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Relu: return "relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::MatMul: return "matmul";
        case OpKind::MatMulNT: return "matmul_nt";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::ReduceSum: return "reduce_sum";
        case OpKind::ReduceMax: return "reduce_max";
        case OpKind::Gather: return "gather";
        case OpKind::Pick: return "pick";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::AddRows: return "add_rows";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Reshape: return "reshape";
    }
    return "?";
}

/// One recorded primitive application. Nodes form the computation graph;
/// inputs always precede the node (the graph is topological by construction).
struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::shared_ptr<Node>> inputs;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;

    std::size_t axis = 0;                 // softmax / log_softmax
    std::size_t from = 0, to = 0;         // slice bounds
    double scalar = 0.0;                  // scale / add_const
    std::vector<std::size_t> indices;     // gather / pick
    std::vector<double> saved;            // layer_norm: xhat then inv_std per row

    std::size_t size() const { return values.size(); }
};

using NodePtr = std::shared_ptr<Node>;

// -------- forward kernels (shared by op construction and graph replay) -----

inline void k_ew2(OpKind op, const std::vector<double>& a, const std::vector<double>& b,
                  std::vector<double>& out) {
    const std::size_t n = a.size();
    out.resize(n);
    switch (op) {
        case OpKind::Add:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
            break;
        case OpKind::Sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
            break;
        case OpKind::Mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
            break;
        default: throw std::logic_error("k_ew2: bad op");
    }
}

inline void k_ew1(OpKind op, const std::vector<double>& a, double c, std::vector<double>& out) {
    const std::size_t n = a.size();
    out.resize(n);
    switch (op) {
        case OpKind::Scale:
            for (std::size_t i = 0; i < n; ++i) out[i] = c * a[i];
            break;
        case OpKind::AddConst:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + c;
            break;
        case OpKind::Exp:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
            break;
        case OpKind::Log:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::log(a[i]);
            break;
        case OpKind::Sqrt:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
            break;
        case OpKind::Relu:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
            break;
        case OpKind::Tanh:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
            break;
        default: throw std::logic_error("k_ew1: bad op");
    }
}

// C(m,n) = A(m,k) * B(k,n)
inline void k_mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(m,n) = A(m,k) * B(n,k)^T
inline void k_mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

// C(k,n) = A(m,k)^T * B(m,n)
inline void k_mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    std::fill(c, c + k * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

struct AxisSpan {
    std::size_t outer, n, inner;
};

inline AxisSpan axis_span(const Shape& shape, std::size_t axis) {
    AxisSpan s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline void k_softmax(const std::vector<double>& x, const Shape& shape, std::size_t axis,
                      bool log_space, std::vector<double>& out) {
    out.resize(x.size());
    const AxisSpan s = axis_span(shape, axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s.n; ++j) m = std::max(m, x[base + j * s.inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) z += std::exp(x[base + j * s.inner] - m);
            if (log_space) {
                const double lz = m + std::log(z);
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t idx = base + j * s.inner;
                    out[idx] = x[idx] - lz;
                }
            } else {
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t idx = base + j * s.inner;
                    out[idx] = std::exp(x[idx] - m) / z;
                }
            }
        }
    }
}

inline void k_layer_norm(const std::vector<double>& x, std::size_t rows, std::size_t cols,
                         const std::vector<double>& gain, const std::vector<double>& bias,
                         double eps, std::vector<double>& out, std::vector<double>& saved) {
    out.resize(x.size());
    saved.resize(x.size() + rows);  // xhat per element, then inv_std per row
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = xr[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        saved[x.size() + r] = inv_std;
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * inv_std;
            saved[r * cols + c] = xhat;
            out[r * cols + c] = xhat * gain[c] + bias[c];
        }
    }
}

/// Recomputes a node's forward values from its recorded inputs and
/// attributes. Used by Graph::replay_matches to show the recorded
/// application stream reproduces the stored outputs bit-for-bit.
inline std::vector<double> replay_node(const Node& n) {
    std::vector<double> out;
    switch (n.op) {
        case OpKind::Leaf: return n.values;
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul:
            k_ew2(n.op, n.inputs[0]->values, n.inputs[1]->values, out);
            return out;
        case OpKind::Scale:
        case OpKind::AddConst:
        case OpKind::Exp:
        case OpKind::Log:
        case OpKind::Sqrt:
        case OpKind::Relu:
        case OpKind::Tanh:
            k_ew1(n.op, n.inputs[0]->values, n.scalar, out);
            return out;
        case OpKind::SubScalar: {
            const auto& a = n.inputs[0]->values;
            const double s = n.inputs[1]->values[0];
            out.resize(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - s;
            return out;
        }
        case OpKind::MatMul: {
            const auto& A = *n.inputs[0];
            const auto& B = *n.inputs[1];
            out.resize(A.shape[0] * B.shape[1]);
            k_mm_nn(A.values.data(), B.values.data(), out.data(), A.shape[0], A.shape[1],
                    B.shape[1]);
            return out;
        }
        case OpKind::MatMulNT: {
            const auto& A = *n.inputs[0];
            const auto& B = *n.inputs[1];
            out.resize(A.shape[0] * B.shape[0]);
            k_mm_nt(A.values.data(), B.values.data(), out.data(), A.shape[0], A.shape[1],
                    B.shape[0]);
            return out;
        }
        case OpKind::Softmax:
            k_softmax(n.inputs[0]->values, n.inputs[0]->shape, n.axis, false, out);
            return out;
        case OpKind::LogSoftmax:
            k_softmax(n.inputs[0]->values, n.inputs[0]->shape, n.axis, true, out);
            return out;
        case OpKind::ReduceSum: {
            double acc = 0.0;
            for (double v : n.inputs[0]->values) acc += v;
            return {acc};
        }
        case OpKind::ReduceMax: {
            double m = n.inputs[0]->values[0];
            for (double v : n.inputs[0]->values) m = std::max(m, v);
            return {m};
        }
        case OpKind::Gather: {
            const auto& src = *n.inputs[0];
            const std::size_t cols = src.shape.size() == 2 ? src.shape[1] : 1;
            out.resize(n.indices.size() * cols);
            for (std::size_t i = 0; i < n.indices.size(); ++i)
                std::copy_n(src.values.data() + n.indices[i] * cols, cols, out.data() + i * cols);
            return out;
        }
        case OpKind::Pick: {
            const auto& src = *n.inputs[0];
            const std::size_t cols = src.shape[1];
            out.resize(n.indices.size());
            for (std::size_t i = 0; i < n.indices.size(); ++i)
                out[i] = src.values[i * cols + n.indices[i]];
            return out;
        }
        case OpKind::Concat: {
            for (const auto& in : n.inputs) out.insert(out.end(), in->values.begin(), in->values.end());
            return out;
        }
        case OpKind::Slice: {
            const auto& src = *n.inputs[0];
            const std::size_t cols = src.shape.size() == 2 ? src.shape[1] : 1;
            out.assign(src.values.begin() + static_cast<std::ptrdiff_t>(n.from * cols),
                       src.values.begin() + static_cast<std::ptrdiff_t>(n.to * cols));
            return out;
        }
        case OpKind::AddRows: {
            const auto& m = *n.inputs[0];
            const auto& v = n.inputs[1]->values;
            const std::size_t rows = m.shape[0], cols = m.shape[1];
            out.resize(rows * cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    out[r * cols + c] = m.values[r * cols + c] + v[c];
            return out;
        }
        case OpKind::LayerNorm: {
            std::vector<double> saved;
            k_layer_norm(n.inputs[0]->values, n.inputs[0]->shape[0], n.inputs[0]->shape[1],
                         n.inputs[1]->values, n.inputs[2]->values, n.scalar, out, saved);
            return out;
        }
        case OpKind::Reshape: return n.inputs[0]->values;
    }
    throw std::logic_error("replay_node: unhandled op");
}

}  // namespace detail

/// Dense tensor of doubles participating in a recorded computation graph.
/// Every operation produces a fresh immutable tensor; only leaves (parameters
/// and constants) expose mutable storage, so an optimizer can update weights
/// between graph builds.
class Tensor {
  public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_size(shape) != values.size())
            throw std::invalid_argument("Tensor: shape does not match value count");
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor constant(Shape shape, std::vector<double> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return leaf({1}, {v}, requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(shape_size(shape), 0.0);
        return leaf(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(shape_size(shape), value);
        return leaf(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<double>& values() const { return node_->values; }

    /// Mutable storage; leaves only. Graph-produced tensors are immutable.
    std::vector<double>& values_mut() {
        if (node_->op != detail::OpKind::Leaf)
            throw std::logic_error("values_mut: only leaf tensors are mutable");
        return node_->values;
    }

    /// Gradient filled by the most recent backward() covering this tensor.
    /// Empty if no backward has touched it yet.
    const std::vector<double>& grad() const { return node_->grad; }

    double item() const {
        if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
        return node_->values[0];
    }

    double at(std::size_t i) const { return node_->values.at(i); }
    double at(std::size_t r, std::size_t c) const { return node_->values.at(r * shape()[1] + c); }

    detail::NodePtr node() const { return node_; }

    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

  private:
    detail::NodePtr node_;
};

namespace detail {

inline NodePtr make_node(OpKind op, Shape shape, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs) n->requires_grad = n->requires_grad || in->requires_grad;
    return n;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ----------------------------- operations ---------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    auto n = detail::make_node(detail::OpKind::Add, a.shape(), {a.node(), b.node()});
    detail::k_ew2(detail::OpKind::Add, a.values(), b.values(), n->values);
    return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    auto n = detail::make_node(detail::OpKind::Sub, a.shape(), {a.node(), b.node()});
    detail::k_ew2(detail::OpKind::Sub, a.values(), b.values(), n->values);
    return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    auto n = detail::make_node(detail::OpKind::Mul, a.shape(), {a.node(), b.node()});
    detail::k_ew2(detail::OpKind::Mul, a.values(), b.values(), n->values);
    return Tensor(n);
}

inline Tensor scale(const Tensor& a, double c) {
    auto n = detail::make_node(detail::OpKind::Scale, a.shape(), {a.node()});
    n->scalar = c;
    detail::k_ew1(detail::OpKind::Scale, a.values(), c, n->values);
    return Tensor(n);
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor add_const(const Tensor& a, double c) {
    auto n = detail::make_node(detail::OpKind::AddConst, a.shape(), {a.node()});
    n->scalar = c;
    detail::k_ew1(detail::OpKind::AddConst, a.values(), c, n->values);
    return Tensor(n);
}

/// x - s with s a scalar tensor, broadcast over all of x.
inline Tensor sub_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("sub_scalar: subtrahend must be scalar");
    auto n = detail::make_node(detail::OpKind::SubScalar, x.shape(), {x.node(), s.node()});
    const double sv = s.values()[0];
    n->values.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) n->values[i] = x.values()[i] - sv;
    return Tensor(n);
}

inline Tensor exp(const Tensor& a) {
    auto n = detail::make_node(detail::OpKind::Exp, a.shape(), {a.node()});
    detail::k_ew1(detail::OpKind::Exp, a.values(), 0.0, n->values);
    return Tensor(n);
}

inline Tensor log(const Tensor& a) {
    auto n = detail::make_node(detail::OpKind::Log, a.shape(), {a.node()});
    detail::k_ew1(detail::OpKind::Log, a.values(), 0.0, n->values);
    return Tensor(n);
}

inline Tensor sqrt(const Tensor& a) {
    auto n = detail::make_node(detail::OpKind::Sqrt, a.shape(), {a.node()});
    detail::k_ew1(detail::OpKind::Sqrt, a.values(), 0.0, n->values);
    return Tensor(n);
}

inline Tensor relu(const Tensor& a) {
    auto n = detail::make_node(detail::OpKind::Relu, a.shape(), {a.node()});
    detail::k_ew1(detail::OpKind::Relu, a.values(), 0.0, n->values);
    return Tensor(n);
}

inline Tensor tanh(const Tensor& a) {
    auto n = detail::make_node(detail::OpKind::Tanh, a.shape(), {a.node()});
    detail::k_ew1(detail::OpKind::Tanh, a.values(), 0.0, n->values);
    return Tensor(n);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: incompatible shapes");
    auto n = detail::make_node(detail::OpKind::MatMul, {a.shape()[0], b.shape()[1]},
                               {a.node(), b.node()});
    n->values.resize(a.shape()[0] * b.shape()[1]);
    detail::k_mm_nn(a.values().data(), b.values().data(), n->values.data(), a.shape()[0],
                    a.shape()[1], b.shape()[1]);
    return Tensor(n);
}

/// A * B^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        throw std::invalid_argument("matmul_nt: incompatible shapes");
    auto n = detail::make_node(detail::OpKind::MatMulNT, {a.shape()[0], b.shape()[0]},
                               {a.node(), b.node()});
    n->values.resize(a.shape()[0] * b.shape()[0]);
    detail::k_mm_nt(a.values().data(), b.values().data(), n->values.data(), a.shape()[0],
                    a.shape()[1], b.shape()[0]);
    return Tensor(n);
}

/// Numerically stable softmax along `axis` (row max subtracted first).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
    auto n = detail::make_node(detail::OpKind::Softmax, x.shape(), {x.node()});
    n->axis = axis;
    detail::k_softmax(x.values(), x.shape(), axis, false, n->values);
    return Tensor(n);
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("log_softmax: axis out of range");
    auto n = detail::make_node(detail::OpKind::LogSoftmax, x.shape(), {x.node()});
    n->axis = axis;
    detail::k_softmax(x.values(), x.shape(), axis, true, n->values);
    return Tensor(n);
}

inline Tensor reduce_sum(const Tensor& x) {
    auto n = detail::make_node(detail::OpKind::ReduceSum, {1}, {x.node()});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    n->values = {acc};
    return Tensor(n);
}

inline Tensor reduce_max(const Tensor& x) {
    if (x.size() == 0) throw std::invalid_argument("reduce_max: empty tensor");
    auto n = detail::make_node(detail::OpKind::ReduceMax, {1}, {x.node()});
    double m = x.values()[0];
    for (double v : x.values()) m = std::max(m, v);
    n->values = {m};
    return Tensor(n);
}

/// Row lookup along axis 0. For a vector input this selects elements; for a
/// matrix it selects rows (embedding lookup). Indices may repeat; the
/// backward pass scatter-adds.
inline Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices) {
    if (x.rank() != 1 && x.rank() != 2) throw std::invalid_argument("gather: rank must be 1 or 2");
    const std::size_t rows = x.shape()[0];
    const std::size_t cols = x.rank() == 2 ? x.shape()[1] : 1;
    for (auto i : indices)
        if (i >= rows) throw std::invalid_argument("gather: index out of range");
    Shape out_shape = x.rank() == 2 ? Shape{indices.size(), cols} : Shape{indices.size()};
    auto n = detail::make_node(detail::OpKind::Gather, out_shape, {x.node()});
    n->indices = indices;
    n->values.resize(indices.size() * cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(x.values().data() + indices[i] * cols, cols, n->values.data() + i * cols);
    return Tensor(n);
}

/// out[i] = m[i, ids[i]] — one element per row.
inline Tensor pick(const Tensor& m, const std::vector<std::size_t>& ids) {
    if (m.rank() != 2) throw std::invalid_argument("pick: matrix required");
    if (ids.size() != m.shape()[0]) throw std::invalid_argument("pick: one index per row required");
    for (auto c : ids)
        if (c >= m.shape()[1]) throw std::invalid_argument("pick: column out of range");
    auto n = detail::make_node(detail::OpKind::Pick, {ids.size()}, {m.node()});
    n->indices = ids;
    n->values.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) n->values[i] = m.at(i, ids[i]);
    return Tensor(n);
}

/// Concatenate along axis 0: vectors end-to-end, matrices stacked by rows.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    const std::size_t cols = rank == 2 ? parts[0].shape()[1] : 1;
    std::size_t rows = 0;
    std::vector<detail::NodePtr> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.rank() != rank || (rank == 2 && p.shape()[1] != cols))
            throw std::invalid_argument("concat: mismatched shapes");
        rows += p.shape()[0];
        ins.push_back(p.node());
    }
    Shape out_shape = rank == 2 ? Shape{rows, cols} : Shape{rows};
    auto n = detail::make_node(detail::OpKind::Concat, out_shape, std::move(ins));
    n->values.reserve(rows * cols);
    for (const auto& p : parts) n->values.insert(n->values.end(), p.values().begin(), p.values().end());
    return Tensor(n);
}

/// Rows [from, to) of a matrix, or elements [from, to) of a vector.
inline Tensor slice(const Tensor& x, std::size_t from, std::size_t to) {
    if (x.rank() != 1 && x.rank() != 2) throw std::invalid_argument("slice: rank must be 1 or 2");
    if (from > to || to > x.shape()[0]) throw std::invalid_argument("slice: bad bounds");
    const std::size_t cols = x.rank() == 2 ? x.shape()[1] : 1;
    Shape out_shape = x.rank() == 2 ? Shape{to - from, cols} : Shape{to - from};
    auto n = detail::make_node(detail::OpKind::Slice, out_shape, {x.node()});
    n->from = from;
    n->to = to;
    n->values.assign(x.values().begin() + static_cast<std::ptrdiff_t>(from * cols),
                     x.values().begin() + static_cast<std::ptrdiff_t>(to * cols));
    return Tensor(n);
}

/// Broadcast-add a length-C vector to every row of an R x C matrix.
inline Tensor add_rows(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.shape()[0] != m.shape()[1])
        throw std::invalid_argument("add_rows: incompatible shapes");
    auto n = detail::make_node(detail::OpKind::AddRows, m.shape(), {m.node(), v.node()});
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    n->values.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            n->values[r * cols + c] = m.values()[r * cols + c] + v.values()[c];
    return Tensor(n);
}

/// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.shape()[0] != x.shape()[1] ||
        bias.shape()[0] != x.shape()[1])
        throw std::invalid_argument("layer_norm: incompatible shapes");
    auto n = detail::make_node(detail::OpKind::LayerNorm, x.shape(),
                               {x.node(), gain.node(), bias.node()});
    n->scalar = eps;
    detail::k_layer_norm(x.values(), x.shape()[0], x.shape()[1], gain.values(), bias.values(), eps,
                         n->values, n->saved);
    return Tensor(n);
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) throw std::invalid_argument("reshape: element count changed");
    auto n = detail::make_node(detail::OpKind::Reshape, std::move(shape), {x.node()});
    n->values = x.values();
    return Tensor(n);
}

/// log(sum(exp(v))) for a vector, max-shifted for stability. Gradient is
/// softmax(v), which falls out of the composition exactly.
inline Tensor logsumexp(const Tensor& v) {
    Tensor m = reduce_max(v);
    return add(m, log(reduce_sum(exp(sub_scalar(v, m)))));
}

// ----------------------------- backward -----------------------------------

namespace detail {

inline void ensure_grad(Node& n) {
    if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
}

inline void backward_node(Node& n) {
    const std::vector<double>& g = n.grad;
    auto want = [](const NodePtr& in) { return in->requires_grad; };
    switch (n.op) {
        case OpKind::Leaf: return;
        case OpKind::Add:
            for (int s = 0; s < 2; ++s)
                if (want(n.inputs[s])) {
                    ensure_grad(*n.inputs[s]);
                    for (std::size_t i = 0; i < g.size(); ++i) n.inputs[s]->grad[i] += g[i];
                }
            return;
        case OpKind::Sub:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i];
            }
            if (want(n.inputs[1])) {
                ensure_grad(*n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[1]->grad[i] -= g[i];
            }
            return;
        case OpKind::Mul:
            for (int s = 0; s < 2; ++s)
                if (want(n.inputs[s])) {
                    ensure_grad(*n.inputs[s]);
                    const auto& other = n.inputs[1 - s]->values;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        n.inputs[s]->grad[i] += g[i] * other[i];
                }
            return;
        case OpKind::Scale:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i] * n.scalar;
            }
            return;
        case OpKind::AddConst:
        case OpKind::Reshape:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i];
            }
            return;
        case OpKind::SubScalar:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i];
            }
            if (want(n.inputs[1])) {
                ensure_grad(*n.inputs[1]);
                double acc = 0.0;
                for (double gi : g) acc += gi;
                n.inputs[1]->grad[0] -= acc;
            }
            return;
        case OpKind::Exp:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    n.inputs[0]->grad[i] += g[i] * n.values[i];
            }
            return;
        case OpKind::Log:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                const auto& x = n.inputs[0]->values;
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i] / x[i];
            }
            return;
        case OpKind::Sqrt:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = std::max(n.values[i], 1e-150);
                    n.inputs[0]->grad[i] += g[i] / (2.0 * y);
                }
            }
            return;
        case OpKind::Relu:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                const auto& x = n.inputs[0]->values;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0) n.inputs[0]->grad[i] += g[i];
            }
            return;
        case OpKind::Tanh:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    n.inputs[0]->grad[i] += g[i] * (1.0 - n.values[i] * n.values[i]);
            }
            return;
        case OpKind::MatMul: {
            Node& A = *n.inputs[0];
            Node& B = *n.inputs[1];
            const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
            if (A.requires_grad) {
                ensure_grad(A);
                std::vector<double> tmp(m * k);
                k_mm_nt(g.data(), B.values.data(), tmp.data(), m, p, k);
                for (std::size_t i = 0; i < tmp.size(); ++i) A.grad[i] += tmp[i];
            }
            if (B.requires_grad) {
                ensure_grad(B);
                std::vector<double> tmp(k * p);
                k_mm_tn(A.values.data(), g.data(), tmp.data(), m, k, p);
                for (std::size_t i = 0; i < tmp.size(); ++i) B.grad[i] += tmp[i];
            }
            return;
        }
        case OpKind::MatMulNT: {
            Node& A = *n.inputs[0];
            Node& B = *n.inputs[1];
            const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[0];
            if (A.requires_grad) {
                ensure_grad(A);
                std::vector<double> tmp(m * k);
                k_mm_nn(g.data(), B.values.data(), tmp.data(), m, p, k);
                for (std::size_t i = 0; i < tmp.size(); ++i) A.grad[i] += tmp[i];
            }
            if (B.requires_grad) {
                ensure_grad(B);
                std::vector<double> tmp(p * k);
                k_mm_tn(g.data(), A.values.data(), tmp.data(), m, p, k);
                for (std::size_t i = 0; i < tmp.size(); ++i) B.grad[i] += tmp[i];
            }
            return;
        }
        case OpKind::Softmax: {
            if (!want(n.inputs[0])) return;
            ensure_grad(*n.inputs[0]);
            const AxisSpan s = axis_span(n.shape, n.axis);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = o * s.n * s.inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < s.n; ++j) {
                        const std::size_t idx = base + j * s.inner;
                        dot += g[idx] * n.values[idx];
                    }
                    for (std::size_t j = 0; j < s.n; ++j) {
                        const std::size_t idx = base + j * s.inner;
                        n.inputs[0]->grad[idx] += n.values[idx] * (g[idx] - dot);
                    }
                }
            return;
        }
        case OpKind::LogSoftmax: {
            if (!want(n.inputs[0])) return;
            ensure_grad(*n.inputs[0]);
            const AxisSpan s = axis_span(n.shape, n.axis);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = o * s.n * s.inner + in;
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
                    for (std::size_t j = 0; j < s.n; ++j) {
                        const std::size_t idx = base + j * s.inner;
                        n.inputs[0]->grad[idx] += g[idx] - std::exp(n.values[idx]) * gsum;
                    }
                }
            return;
        }
        case OpKind::ReduceSum:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (auto& gi : n.inputs[0]->grad) gi += g[0];
            }
            return;
        case OpKind::ReduceMax:
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                const auto& x = n.inputs[0]->values;
                std::size_t arg = 0;
                for (std::size_t i = 1; i < x.size(); ++i)
                    if (x[i] > x[arg]) arg = i;  // first maximum wins ties
                n.inputs[0]->grad[arg] += g[0];
            }
            return;
        case OpKind::Gather: {
            if (!want(n.inputs[0])) return;
            Node& src = *n.inputs[0];
            ensure_grad(src);
            const std::size_t cols = src.shape.size() == 2 ? src.shape[1] : 1;
            for (std::size_t i = 0; i < n.indices.size(); ++i)
                for (std::size_t c = 0; c < cols; ++c)
                    src.grad[n.indices[i] * cols + c] += g[i * cols + c];
            return;
        }
        case OpKind::Pick: {
            if (!want(n.inputs[0])) return;
            Node& src = *n.inputs[0];
            ensure_grad(src);
            const std::size_t cols = src.shape[1];
            for (std::size_t i = 0; i < n.indices.size(); ++i)
                src.grad[i * cols + n.indices[i]] += g[i];
            return;
        }
        case OpKind::Concat: {
            std::size_t offset = 0;
            for (auto& in : n.inputs) {
                const std::size_t len = in->values.size();
                if (in->requires_grad) {
                    ensure_grad(*in);
                    for (std::size_t i = 0; i < len; ++i) in->grad[i] += g[offset + i];
                }
                offset += len;
            }
            return;
        }
        case OpKind::Slice: {
            if (!want(n.inputs[0])) return;
            Node& src = *n.inputs[0];
            ensure_grad(src);
            const std::size_t cols = src.shape.size() == 2 ? src.shape[1] : 1;
            for (std::size_t i = 0; i < g.size(); ++i) src.grad[n.from * cols + i] += g[i];
            return;
        }
        case OpKind::AddRows: {
            const std::size_t rows = n.shape[0], cols = n.shape[1];
            if (want(n.inputs[0])) {
                ensure_grad(*n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) n.inputs[0]->grad[i] += g[i];
            }
            if (want(n.inputs[1])) {
                ensure_grad(*n.inputs[1]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                        n.inputs[1]->grad[c] += g[r * cols + c];
            }
            return;
        }
        case OpKind::LayerNorm: {
            Node& x = *n.inputs[0];
            Node& gain = *n.inputs[1];
            Node& bias = *n.inputs[2];
            const std::size_t rows = n.shape[0], cols = n.shape[1];
            const double* xhat = n.saved.data();
            const double* inv_std = n.saved.data() + rows * cols;
            if (gain.requires_grad) ensure_grad(gain);
            if (bias.requires_grad) ensure_grad(bias);
            if (x.requires_grad) ensure_grad(x);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                const double* xh = xhat + r * cols;
                if (gain.requires_grad)
                    for (std::size_t c = 0; c < cols; ++c) gain.grad[c] += gr[c] * xh[c];
                if (bias.requires_grad)
                    for (std::size_t c = 0; c < cols; ++c) bias.grad[c] += gr[c];
                if (x.requires_grad) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dxhat = gr[c] * gain.values[c];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xh[c];
                    }
                    mean_dxhat /= static_cast<double>(cols);
                    mean_dxhat_xhat /= static_cast<double>(cols);
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dxhat = gr[c] * gain.values[c];
                        x.grad[r * cols + c] +=
                            inv_std[r] * (dxhat - mean_dxhat - xh[c] * mean_dxhat_xhat);
                    }
                }
            }
            return;
        }
    }
    throw std::logic_error("backward_node: unhandled op");
}

}  // namespace detail

/// Topologically ordered record of the primitive applications that produced
/// a tensor. Inputs always precede their consumers.
class Graph {
  public:
    static Graph from(const Tensor& root) {
        Graph g;
        if (!root.defined()) throw std::invalid_argument("Graph::from: undefined tensor");
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        std::unordered_set<detail::Node*> visited;
        std::unordered_map<detail::Node*, detail::NodePtr> owners;
        owners[root.node().get()] = root.node();
        stack.emplace_back(root.node().get(), 0);
        visited.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                detail::NodePtr child = node->inputs[next++];
                if (visited.insert(child.get()).second) {
                    owners[child.get()] = child;
                    stack.emplace_back(child.get(), 0);
                }
            } else {
                g.order_.push_back(owners[node]);
                g.members_.insert(node);
                stack.pop_back();
            }
        }
        return g;
    }

    std::size_t size() const { return order_.size(); }

    bool contains(const Tensor& t) const {
        return t.defined() && members_.count(t.node().get()) > 0;
    }

    const std::vector<detail::NodePtr>& nodes() const { return order_; }

    /// Re-executes every recorded primitive from its inputs and checks the
    /// recomputed outputs are bit-identical to the stored ones.
    bool replay_matches() const {
        for (const auto& n : order_) {
            std::vector<double> fresh = detail::replay_node(*n);
            if (fresh.size() != n->values.size()) return false;
            if (std::memcmp(fresh.data(), n->values.data(), fresh.size() * sizeof(double)) != 0)
                return false;
        }
        return true;
    }

    /// Reverse-mode differentiation of a scalar loss through this graph.
    /// Gradients of all reachable nodes are reset first; repeated calls do
    /// not accumulate across calls.
    void backward(const Tensor& loss) const {
        if (!loss.defined() || loss.size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        if (!contains(loss)) throw std::invalid_argument("backward: loss not produced by graph");
        for (const auto& n : order_)
            if (n->requires_grad) n->grad.assign(n->values.size(), 0.0);
        if (!loss.node()->requires_grad) return;  // constant loss: all gradients zero
        loss.node()->grad.assign(1, 1.0);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it)
            if ((*it)->requires_grad) detail::backward_node(**it);
    }

  private:
    std::vector<detail::NodePtr> order_;
    std::unordered_set<detail::Node*> members_;
};

/// Differentiate `loss` with respect to every requires_grad leaf that
/// produced it. Resets reachable gradients before accumulating.
inline void backward(const Tensor& loss) { Graph::from(loss).backward(loss); }

/// Max relative error between analytic gradients and central finite
/// differences over every entry of every parameter:
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `f` must be deterministic and return a scalar.
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double h = 1e-5) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    Tensor loss = f();
    if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        if (p.grad().empty())
            analytic.emplace_back(p.size(), 0.0);
        else
            analytic.push_back(p.grad());
    }
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto& v = p.values_mut();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double lp = f().item();
            v[i] = orig - h;
            const double lm = f().item();
            v[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) /
                               std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace unitedqa
