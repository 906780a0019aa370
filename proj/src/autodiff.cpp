#include "fsprompt/autodiff.hpp"

#include "fsprompt/error.hpp"
#include "fsprompt/kernels.hpp"
#include "tensor_impl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace fsprompt {

namespace {

thread_local Graph* t_active = nullptr;

[[noreturn]] void shape_fail(OpKind kind, std::span<const Tensor> inputs, const std::string& why) {
    std::ostringstream os;
    os << to_string(kind) << ": " << why << " (shapes";
    for (const auto& t : inputs) os << ' ' << t.shape().str();
    os << ')';
    throw ShapeError(os.str());
}

enum class Broadcast { same, row, scalar };

Broadcast broadcast_kind(OpKind kind, std::span<const Tensor> in) {
    const Shape& a = in[0].shape();
    const Shape& b = in[1].shape();
    if (a == b) return Broadcast::same;
    if (b.rows == 1 && b.cols == a.cols) return Broadcast::row;
    if (b.rows == 1 && b.cols == 1) return Broadcast::scalar;
    shape_fail(kind, in, "operands are not broadcast-compatible");
}

void expect_arity(OpKind kind, std::span<const Tensor> in, std::size_t n) {
    if (in.size() != n) shape_fail(kind, in, "expected " + std::to_string(n) + " inputs");
}

// Forward evaluation shared by apply() and replay. Fills `saved` with the
// intermediates the backward rule needs.
std::vector<double> evaluate(OpKind kind, std::span<const Tensor> in, const OpAttrs& at, Shape& out_shape,
                             std::vector<double>& saved) {
    using kernels::GemmArgs;
    switch (kind) {
    case OpKind::matmul: {
        expect_arity(kind, in, 2);
        const Shape& a = in[0].shape();
        const Shape& b = in[1].shape();
        if (a.cols != b.rows) shape_fail(kind, in, "inner dimensions differ");
        out_shape = {a.rows, b.cols};
        std::vector<double> y(out_shape.numel());
        kernels::gemm(GemmArgs{a.rows, a.cols, b.cols}, in[0].data(), in[1].data(), y);
        return y;
    }
    case OpKind::add:
    case OpKind::mul: {
        expect_arity(kind, in, 2);
        const Broadcast bc = broadcast_kind(kind, in);
        out_shape = in[0].shape();
        const auto a = in[0].data();
        const auto b = in[1].data();
        const std::size_t cols = out_shape.cols;
        std::vector<double> y(out_shape.numel());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double bv = bc == Broadcast::same ? b[i] : bc == Broadcast::row ? b[i % cols] : b[0];
            y[i] = kind == OpKind::add ? a[i] + bv : a[i] * bv;
        }
        return y;
    }
    case OpKind::scale: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v *= at.factor;
        return y;
    }
    case OpKind::concat_rows: {
        expect_arity(kind, in, 2);
        if (in[0].cols() != in[1].cols()) shape_fail(kind, in, "column counts differ");
        out_shape = {in[0].rows() + in[1].rows(), in[0].cols()};
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        y.insert(y.end(), in[1].data().begin(), in[1].data().end());
        return y;
    }
    case OpKind::slice_rows: {
        expect_arity(kind, in, 1);
        if (at.begin > at.end || at.end > in[0].rows()) shape_fail(kind, in, "row range out of bounds");
        out_shape = {at.end - at.begin, in[0].cols()};
        const auto d = in[0].data();
        return std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(at.begin * out_shape.cols),
                                   d.begin() + static_cast<std::ptrdiff_t>(at.end * out_shape.cols));
    }
    case OpKind::relu: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v = v > 0.0 ? v : 0.0;
        return y;
    }
    case OpKind::softmax_rows: {
        expect_arity(kind, in, 1);
        if (in[0].cols() == 0 || in[0].rows() == 0) shape_fail(kind, in, "empty rows");
        out_shape = in[0].shape();
        std::vector<double> y(out_shape.numel());
        kernels::softmax_rows(out_shape.rows, out_shape.cols, in[0].data(), y);
        return y;
    }
    case OpKind::layer_norm_rows: {
        expect_arity(kind, in, 3);
        const std::size_t cols = in[0].cols();
        if (cols == 0) shape_fail(kind, in, "empty rows");
        if (in[1].shape() != Shape{1, cols} || in[2].shape() != Shape{1, cols})
            shape_fail(kind, in, "gain and bias must be 1 x cols");
        out_shape = in[0].shape();
        const std::size_t rows = out_shape.rows;
        // saved layout: xhat (rows*cols) followed by inv_std (rows)
        saved.assign(rows * cols + rows, 0.0);
        std::span<double> xhat(saved.data(), rows * cols);
        std::span<double> inv_std(saved.data() + rows * cols, rows);
        kernels::layer_norm_rows(rows, cols, at.eps, in[0].data(), xhat, inv_std);
        const auto g = in[1].data();
        const auto b = in[2].data();
        std::vector<double> y(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = xhat[r * cols + c] * g[c] + b[c];
        return y;
    }
    case OpKind::mean:
    case OpKind::sum: {
        expect_arity(kind, in, 1);
        if (kind == OpKind::mean && in[0].numel() == 0) shape_fail(kind, in, "mean of empty tensor");
        out_shape = {1, 1};
        double s = 0.0;
        for (double v : in[0].data()) s += v;
        if (kind == OpKind::mean) s /= static_cast<double>(in[0].numel());
        return {s};
    }
    case OpKind::square: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v *= v;
        return y;
    }
    case OpKind::sqrt: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v = std::sqrt(v);
        return y;
    }
    case OpKind::l2_normalize_rows: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        const std::size_t rows = out_shape.rows, cols = out_shape.cols;
        const auto x = in[0].data();
        saved.assign(rows, 0.0);
        std::vector<double> y(rows * cols);
        for (std::size_t r = 0; r < rows; ++r) {
            double ss = 0.0;
            for (std::size_t c = 0; c < cols; ++c) ss += x[r * cols + c] * x[r * cols + c];
            const double norm = std::sqrt(ss);
            if (norm == 0.0) shape_fail(kind, in, "row " + std::to_string(r) + " has zero norm");
            saved[r] = norm;
            for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] / norm;
        }
        return y;
    }
    case OpKind::frobenius_norm: {
        expect_arity(kind, in, 1);
        out_shape = {1, 1};
        double ss = 0.0;
        for (double v : in[0].data()) ss += v * v;
        return {std::sqrt(ss)};
    }
    case OpKind::log: {
        expect_arity(kind, in, 1);
        if (in[0].numel() == 0) shape_fail(kind, in, "empty rows");
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v = std::log(v);
        return y;
    }
    case OpKind::neg: {
        expect_arity(kind, in, 1);
        out_shape = in[0].shape();
        std::vector<double> y(in[0].data().begin(), in[0].data().end());
        for (double& v : y) v = -v;
        return y;
    }
    case OpKind::transpose: {
        expect_arity(kind, in, 1);
        const std::size_t rows = in[0].rows(), cols = in[0].cols();
        out_shape = {cols, rows};
        const auto x = in[0].data();
        std::vector<double> y(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) y[c * rows + r] = x[r * cols + c];
        return y;
    }
    }
    throw GraphError("unknown op kind");
}

std::vector<double>* grad_slot(const Tensor& t) {
    auto& impl = TensorAccess::impl(t);
    if (!impl.requires_grad) return nullptr;
    if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0);
    return &impl.grad;
}

void accumulate_broadcast(std::vector<double>& dst, const std::vector<double>& full, Broadcast bc, std::size_t cols) {
    switch (bc) {
    case Broadcast::same:
        for (std::size_t i = 0; i < full.size(); ++i) dst[i] += full[i];
        break;
    case Broadcast::row:
        for (std::size_t i = 0; i < full.size(); ++i) dst[i % cols] += full[i];
        break;
    case Broadcast::scalar: {
        double s = 0.0;
        for (double v : full) s += v;
        dst[0] += s;
        break;
    }
    }
}

void backprop_node(Graph::Node& node, std::span<const double> g) {
    using kernels::GemmArgs;
    using kernels::Transpose;
    auto& in = node.inputs;
    const auto y = node.output.data();
    switch (node.kind) {
    case OpKind::matmul: {
        const Shape a = in[0].shape(), b = in[1].shape();
        if (auto* da = grad_slot(in[0]))
            kernels::gemm(GemmArgs{a.rows, b.cols, a.cols, Transpose::right, true}, g, in[1].data(), *da);
        if (auto* db = grad_slot(in[1]))
            kernels::gemm(GemmArgs{b.rows, a.rows, b.cols, Transpose::left, true}, in[0].data(), g, *db);
        break;
    }
    case OpKind::add:
    case OpKind::mul: {
        const Broadcast bc = broadcast_kind(node.kind, in);
        const std::size_t cols = node.output.cols();
        const auto a = in[0].data();
        const auto b = in[1].data();
        auto bval = [&](std::size_t i) { return bc == Broadcast::same ? b[i] : bc == Broadcast::row ? b[i % cols] : b[0]; };
        if (auto* da = grad_slot(in[0])) {
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += node.kind == OpKind::add ? g[i] : g[i] * bval(i);
        }
        if (auto* db = grad_slot(in[1])) {
            std::vector<double> full(g.begin(), g.end());
            if (node.kind == OpKind::mul)
                for (std::size_t i = 0; i < full.size(); ++i) full[i] *= a[i];
            accumulate_broadcast(*db, full, bc, cols);
        }
        break;
    }
    case OpKind::scale:
        if (auto* da = grad_slot(in[0]))
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += node.attrs.factor * g[i];
        break;
    case OpKind::concat_rows: {
        const std::size_t split = in[0].numel();
        if (auto* da = grad_slot(in[0]))
            for (std::size_t i = 0; i < split; ++i) (*da)[i] += g[i];
        if (auto* db = grad_slot(in[1]))
            for (std::size_t i = split; i < g.size(); ++i) (*db)[i - split] += g[i];
        break;
    }
    case OpKind::slice_rows:
        if (auto* da = grad_slot(in[0])) {
            const std::size_t offset = node.attrs.begin * in[0].cols();
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[offset + i] += g[i];
        }
        break;
    case OpKind::relu:
        if (auto* da = grad_slot(in[0])) {
            const auto x = in[0].data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) (*da)[i] += g[i];
        }
        break;
    case OpKind::softmax_rows:
        if (auto* da = grad_slot(in[0])) {
            const std::size_t rows = node.output.rows(), cols = node.output.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c)
                    (*da)[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
            }
        }
        break;
    case OpKind::layer_norm_rows: {
        const std::size_t rows = node.output.rows(), cols = node.output.cols();
        const double* xhat = node.saved.data();
        const double* inv_std = node.saved.data() + rows * cols;
        const auto gain = in[1].data();
        if (auto* dg = grad_slot(in[1]))
            for (std::size_t i = 0; i < g.size(); ++i) (*dg)[i % cols] += g[i] * xhat[i];
        if (auto* db = grad_slot(in[2]))
            for (std::size_t i = 0; i < g.size(); ++i) (*db)[i % cols] += g[i];
        if (auto* dx = grad_slot(in[0])) {
            const double n = static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = g[r * cols + c] * gain[c];
                    mean_d += d;
                    mean_dx += d * xhat[r * cols + c];
                }
                mean_d /= n;
                mean_dx /= n;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = g[r * cols + c] * gain[c];
                    (*dx)[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                }
            }
        }
        break;
    }
    case OpKind::mean:
    case OpKind::sum:
        if (auto* da = grad_slot(in[0])) {
            const double s = node.kind == OpKind::mean ? g[0] / static_cast<double>(in[0].numel()) : g[0];
            for (double& v : *da) v += s;
        }
        break;
    case OpKind::square:
        if (auto* da = grad_slot(in[0])) {
            const auto x = in[0].data();
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += 2.0 * x[i] * g[i];
        }
        break;
    case OpKind::sqrt:
        if (auto* da = grad_slot(in[0]))
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] / (2.0 * y[i]);
        break;
    case OpKind::l2_normalize_rows:
        if (auto* da = grad_slot(in[0])) {
            const std::size_t rows = node.output.rows(), cols = node.output.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                const double inv = 1.0 / node.saved[r];
                for (std::size_t c = 0; c < cols; ++c)
                    (*da)[r * cols + c] += inv * (g[r * cols + c] - y[r * cols + c] * dot);
            }
        }
        break;
    case OpKind::frobenius_norm:
        // Subgradient 0 at the origin.
        if (auto* da = grad_slot(in[0]); da && y[0] > 0.0) {
            const auto x = in[0].data();
            const double s = g[0] / y[0];
            for (std::size_t i = 0; i < x.size(); ++i) (*da)[i] += s * x[i];
        }
        break;
    case OpKind::log:
        if (auto* da = grad_slot(in[0])) {
            const auto x = in[0].data();
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] / x[i];
        }
        break;
    case OpKind::neg:
        if (auto* da = grad_slot(in[0]))
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] -= g[i];
        break;
    case OpKind::transpose:
        if (auto* da = grad_slot(in[0])) {
            const std::size_t rows = in[0].rows(), cols = in[0].cols();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) (*da)[r * cols + c] += g[c * rows + r];
        }
        break;
    }
}

}  // namespace

std::string_view to_string(OpKind kind) {
    switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::relu: return "relu";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::layer_norm_rows: return "layer_norm_rows";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::l2_normalize_rows: return "l2_normalize_rows";
    case OpKind::frobenius_norm: return "frobenius_norm";
    case OpKind::log: return "log";
    case OpKind::neg: return "neg";
    case OpKind::transpose: return "transpose";
    }
    return "unknown";
}

GraphScope::GraphScope(Graph& graph) : previous_(t_active) { t_active = &graph; }
GraphScope::~GraphScope() { t_active = previous_; }

Graph* active_graph() noexcept { return t_active; }

void Graph::record(Node node) {
    if (consumed_) throw GraphError("recording onto a graph that was already back-propagated; call reset()");
    nodes_.push_back(std::move(node));
}

void Graph::reset() {
    nodes_.clear();
    consumed_ = false;
}

void Graph::backward(const Tensor& output) {
    if (output.numel() != 1) throw GraphError("backward without a seed requires a scalar output, got " + output.shape().str());
    backward(output, Tensor::scalar(1.0));
}

void Graph::backward(const Tensor& output, const Tensor& seed) {
    if (consumed_) throw GraphError("backward invoked twice on the same graph without reset()");
    if (seed.shape() != output.shape())
        throw GraphError("seed shape " + seed.shape().str() + " does not match output " + output.shape().str());
    std::ptrdiff_t last = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[static_cast<std::size_t>(i)].output.same_storage(output)) {
            last = i;
            break;
        }
    }
    if (last < 0) throw GraphError("backward: output was not produced by this graph");

    auto& out_impl = TensorAccess::impl(output);
    out_impl.grad.assign(seed.data().begin(), seed.data().end());

    for (std::ptrdiff_t i = last; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        auto& impl = TensorAccess::impl(node.output);
        if (impl.grad.size() != impl.data.size()) continue;  // not on a path to the output
        backprop_node(node, impl.grad);
    }

    for (auto& node : nodes_) {
        auto& impl = TensorAccess::impl(node.output);
        impl.grad.clear();
        impl.grad.shrink_to_fit();
        node.saved.clear();
        node.saved.shrink_to_fit();
    }
    consumed_ = true;
}

bool Graph::replay_matches() const {
    for (const auto& node : nodes_) {
        Shape shape;
        std::vector<double> saved;
        const auto y = evaluate(node.kind, node.inputs, node.attrs, shape, saved);
        if (!(shape == node.output.shape())) return false;
        if (!y.empty() && std::memcmp(y.data(), node.output.data().data(), y.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
    Shape shape;
    std::vector<double> saved;
    auto y = evaluate(kind, inputs, attrs, shape, saved);
    Graph* graph = t_active;
    const bool tracked =
        graph != nullptr && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    Tensor out = TensorAccess::make_op_output(shape, std::move(y), tracked);
    if (tracked)
        graph->record(Graph::Node{kind, std::vector<Tensor>(inputs.begin(), inputs.end()), out, attrs, std::move(saved)});
    return out;
}

namespace ops {

namespace {
Tensor unary(OpKind k, const Tensor& a, const OpAttrs& at = {}) {
    const Tensor in[] = {a};
    return apply(k, in, at);
}
Tensor binary(OpKind k, const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(k, in);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return binary(OpKind::matmul, a, b); }
Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
Tensor scale(const Tensor& a, double factor) {
    OpAttrs at;
    at.factor = factor;
    return unary(OpKind::scale, a, at);
}
Tensor concat_rows(const Tensor& top, const Tensor& bottom) { return binary(OpKind::concat_rows, top, bottom); }
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    OpAttrs at;
    at.begin = begin;
    at.end = end;
    return unary(OpKind::slice_rows, a, at);
}
Tensor relu(const Tensor& a) { return unary(OpKind::relu, a); }
Tensor softmax_rows(const Tensor& a) { return unary(OpKind::softmax_rows, a); }
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const Tensor in[] = {x, gain, bias};
    OpAttrs at;
    at.eps = eps;
    return apply(OpKind::layer_norm_rows, in, at);
}
Tensor mean(const Tensor& a) { return unary(OpKind::mean, a); }
Tensor sum(const Tensor& a) { return unary(OpKind::sum, a); }
Tensor square(const Tensor& a) { return unary(OpKind::square, a); }
Tensor sqrt(const Tensor& a) { return unary(OpKind::sqrt, a); }
Tensor l2_normalize_rows(const Tensor& a) { return unary(OpKind::l2_normalize_rows, a); }
Tensor frobenius_norm(const Tensor& a) { return unary(OpKind::frobenius_norm, a); }
Tensor log(const Tensor& a) { return unary(OpKind::log, a); }
Tensor neg(const Tensor& a) { return unary(OpKind::neg, a); }
Tensor transpose(const Tensor& a) { return unary(OpKind::transpose, a); }

}  // namespace ops

}  // namespace fsprompt
