#pragma once

// Minimal reverse-mode differentiation over scalar losses.
//
// A Graph is an immutable, topologically ordered list of operation records.
// Every tensor is viewed as a row-major matrix: rows = product of all leading
// dimensions, cols = last dimension. Rank-1 tensors are single rows. There is
// no broadcasting: binary elementwise ops require identical shapes.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "uqadv/common.hpp"

namespace uqadv {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<Index> shape, Eigen::VectorXd values);

    static Tensor scalar(double v);
    static Tensor vector(const Eigen::Ref<const Eigen::VectorXd>& v);
    static Tensor matrix(const Eigen::Ref<const RowMatrix>& m);
    static Tensor zeros(std::vector<Index> shape);

    const std::vector<Index>& shape() const { return shape_; }
    Index size() const { return values_.size(); }
    Index rows() const;
    Index cols() const;

    const Eigen::VectorXd& values() const { return values_; }
    Eigen::VectorXd& values() { return values_; }
    Eigen::Map<const RowMatrix> as_matrix() const { return {values_.data(), rows(), cols()}; }
    Eigen::Map<RowMatrix> as_matrix() { return {values_.data(), rows(), cols()}; }

    /// The single value of a size-1 tensor.
    double item() const;

    bool operator==(const Tensor& other) const = default;

private:
    std::vector<Index> shape_{0};
    Eigen::VectorXd values_;
};

std::string shape_string(const std::vector<Index>& shape);

enum class OpKind {
    input,
    constant,
    affine,        // x W^T + b, W and b read from a flat parameter node
    relu,
    sine,
    add,
    mul,
    sum,           // -> size-1 tensor
    l2norm,        // row-wise Euclidean norm: (N, C) -> (N, 1); (C) -> (1)
    softmax_xent,  // sum over rows of -log softmax(logits)[label]
    sigmoid_xent,  // sum of binary cross-entropy with logits
};

std::string_view op_name(OpKind kind);

using NodeId = int;

struct Node {
    OpKind kind = OpKind::input;
    std::vector<NodeId> parents;
    std::string name;   // input nodes
    Tensor value;       // constant nodes
    Index offset = 0;   // affine: start of W inside the parameter vector
    Index in_dim = 0;
    Index out_dim = 0;
};

class Graph {
public:
    const std::vector<Node>& nodes() const { return nodes_; }
    NodeId output() const { return output_; }
    /// Names of all input nodes, in node order.
    std::vector<std::string> input_names() const;

private:
    friend class GraphBuilder;
    std::vector<Node> nodes_;
    NodeId output_ = -1;
};

class GraphBuilder {
public:
    /// Returns the existing node when `name` was already declared.
    NodeId input(const std::string& name);
    NodeId constant(Tensor value);
    /// y = x W^T + b with W (out_dim x in_dim, row-major) starting at `offset`
    /// in the flat `params` node, followed by b (out_dim).
    NodeId affine(NodeId x, NodeId params, Index offset, Index in_dim, Index out_dim);
    NodeId relu(NodeId a);
    NodeId sine(NodeId a);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId sum(NodeId a);
    NodeId l2norm(NodeId a);
    /// `labels` holds one integral class index per logits row.
    NodeId softmax_xent(NodeId logits, NodeId labels);
    /// `targets` holds one value in [0, 1] per logit.
    NodeId sigmoid_xent(NodeId logits, NodeId targets);

    Graph build(NodeId output) &&;

private:
    NodeId push(Node node);
    std::vector<Node> nodes_;
    std::map<std::string, NodeId, std::less<>> inputs_;
};

/// Non-owning name -> tensor bindings for one evaluation.
/// Named graph inputs, bound by reference: the tensors must outlive the evaluation.
class Inputs {
public:
    Inputs& bind(std::string name, const Tensor& tensor);
    Inputs& bind(std::string name, Tensor&& tensor) = delete;
    const Tensor* find(std::string_view name) const;

private:
    std::map<std::string, const Tensor*, std::less<>> bound_;
};

/// Per-call forward cache. Holds every node value of one evaluation.
class Evaluation {
public:
    const Graph& graph() const { return *graph_; }
    const Tensor& value(NodeId id) const { return values_[static_cast<std::size_t>(id)]; }
    const Tensor& output() const { return value(graph_->output()); }

private:
    friend Evaluation evaluate(const Graph&, const Inputs&);
    const Graph* graph_ = nullptr;
    std::vector<Tensor> values_;
};

/// Runs the forward pass and keeps all node values. Throws GraphError on
/// unbound inputs, shape mismatches (naming the node), and non-finite values.
Evaluation evaluate(const Graph& graph, const Inputs& inputs);

Tensor eval_forward(const Graph& graph, const Inputs& inputs);

/// Gradient of the (size-1) output with respect to the input named `wrt`,
/// using the cached values of `eval`.
Tensor backward(const Evaluation& eval, std::string_view wrt);

Tensor grad(const Graph& graph, const Inputs& inputs, std::string_view wrt);

struct ValueAndGrad {
    double value = 0.0;
    Tensor gradient;
};

ValueAndGrad value_and_grad(const Graph& graph, const Inputs& inputs, std::string_view wrt);

/// max_i |analytic_i - central_i| / (|analytic_i| + |central_i| + 1e-12)
double finite_diff_check(const Graph& graph, const Inputs& inputs, std::string_view wrt, double step);

}  // namespace uqadv
