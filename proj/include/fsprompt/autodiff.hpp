#pragma once

#include "fsprompt/tensor.hpp"

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace fsprompt {

enum class OpKind {
    matmul,
    add,
    mul,
    scale,
    concat_rows,
    slice_rows,
    relu,
    softmax_rows,
    layer_norm_rows,
    mean,
    sum,
    square,
    sqrt,
    l2_normalize_rows,
    frobenius_norm,
    log,
    neg,
    transpose,
};

std::string_view to_string(OpKind kind);

struct OpAttrs {
    double factor = 1.0;         // scale
    std::size_t begin = 0;       // slice_rows
    std::size_t end = 0;         // slice_rows (exclusive)
    double eps = 1e-5;           // layer_norm_rows
};

// Records the ops applied while it is the thread's active graph. Built fresh
// for every forward/backward pass.
class Graph {
public:
    struct Node {
        OpKind kind;
        std::vector<Tensor> inputs;
        Tensor output;
        OpAttrs attrs;
        std::vector<double> saved;  // kind-specific forward intermediates
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    bool consumed() const noexcept { return consumed_; }

    // Propagates `seed` from `output` (which must be produced by this graph)
    // into every requires_grad leaf. Releases intermediate state afterwards.
    void backward(const Tensor& output, const Tensor& seed);
    // Seed of ones on the final recorded node; requires a scalar output.
    void backward(const Tensor& output);

    // Drops every recorded node so the graph can be reused.
    void reset();

    // Recomputes each recorded node from its inputs and compares bitwise.
    bool replay_matches() const;

    void record(Node node);

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// RAII activation of a graph on the current thread.
class GraphScope {
public:
    explicit GraphScope(Graph& graph);
    ~GraphScope();
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph* previous_;
};

Graph* active_graph() noexcept;

// Evaluates one primitive. When any input requires gradient and a graph is
// active, the step is recorded and the output requires gradient.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
// Same shape, or b a 1 x cols row broadcast over a's rows, or b 1 x 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// Normalizes each row to zero mean / unit variance, then applies the
// 1 x cols gain and bias.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor l2_normalize_rows(const Tensor& a);
Tensor frobenius_norm(const Tensor& a);
Tensor log(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor transpose(const Tensor& a);

}  // namespace ops

}  // namespace fsprompt
