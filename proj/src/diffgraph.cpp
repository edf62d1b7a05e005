#include "uqadv/diffgraph.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace uqadv {

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<Index> shape, Eigen::VectorXd values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty()) throw GraphError("tensor shape must have at least one dimension");
    Index n = 1;
    for (Index d : shape_) {
        if (d <= 0) throw GraphError("tensor dimensions must be positive, got " + shape_string(shape_));
        n *= d;
    }
    if (n != values_.size()) {
        throw GraphError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, Eigen::VectorXd::Constant(1, v)); }

Tensor Tensor::vector(const Eigen::Ref<const Eigen::VectorXd>& v) { return Tensor({v.size()}, v); }

Tensor Tensor::matrix(const Eigen::Ref<const RowMatrix>& m) {
    Eigen::VectorXd values(m.size());
    Eigen::Map<RowMatrix>(values.data(), m.rows(), m.cols()) = m;
    return Tensor({m.rows(), m.cols()}, std::move(values));
}

Tensor Tensor::zeros(std::vector<Index> shape) {
    const Index n = std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
    return Tensor(std::move(shape), Eigen::VectorXd::Zero(n));
}

Index Tensor::cols() const { return shape_.back(); }

Index Tensor::rows() const {
    Index r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
}

double Tensor::item() const {
    if (size() != 1) throw GraphError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
}

std::string shape_string(const std::vector<Index>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::input: return "input";
        case OpKind::constant: return "constant";
        case OpKind::affine: return "affine";
        case OpKind::relu: return "relu";
        case OpKind::sine: return "sine";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::sum: return "sum";
        case OpKind::l2norm: return "l2norm";
        case OpKind::softmax_xent: return "softmax_xent";
        case OpKind::sigmoid_xent: return "sigmoid_xent";
    }
    return "unknown";
}

std::vector<std::string> Graph::input_names() const {
    std::vector<std::string> names;
    for (const Node& n : nodes_)
        if (n.kind == OpKind::input) names.push_back(n.name);
    return names;
}

// ---------------------------------------------------------------------------
// Builder

NodeId GraphBuilder::push(Node node) {
    const auto id = static_cast<NodeId>(nodes_.size());
    for (NodeId p : node.parents) {
        if (p < 0 || p >= id) throw GraphError("parent index " + std::to_string(p) + " does not precede node " +
                                               std::to_string(id));
    }
    nodes_.push_back(std::move(node));
    return id;
}

NodeId GraphBuilder::input(const std::string& name) {
    if (auto it = inputs_.find(name); it != inputs_.end()) return it->second;
    Node n;
    n.kind = OpKind::input;
    n.name = name;
    const NodeId id = push(std::move(n));
    inputs_.emplace(name, id);
    return id;
}

NodeId GraphBuilder::constant(Tensor value) {
    Node n;
    n.kind = OpKind::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId GraphBuilder::affine(NodeId x, NodeId params, Index offset, Index in_dim, Index out_dim) {
    if (offset < 0 || in_dim <= 0 || out_dim <= 0) throw GraphError("affine: invalid layout");
    Node n;
    n.kind = OpKind::affine;
    n.parents = {x, params};
    n.offset = offset;
    n.in_dim = in_dim;
    n.out_dim = out_dim;
    return push(std::move(n));
}

namespace {
Node unary(OpKind kind, NodeId a) {
    Node n;
    n.kind = kind;
    n.parents = {a};
    return n;
}
Node binary(OpKind kind, NodeId a, NodeId b) {
    Node n;
    n.kind = kind;
    n.parents = {a, b};
    return n;
}
}  // namespace

NodeId GraphBuilder::relu(NodeId a) { return push(unary(OpKind::relu, a)); }
NodeId GraphBuilder::sine(NodeId a) { return push(unary(OpKind::sine, a)); }
NodeId GraphBuilder::add(NodeId a, NodeId b) { return push(binary(OpKind::add, a, b)); }
NodeId GraphBuilder::mul(NodeId a, NodeId b) { return push(binary(OpKind::mul, a, b)); }
NodeId GraphBuilder::sum(NodeId a) { return push(unary(OpKind::sum, a)); }
NodeId GraphBuilder::l2norm(NodeId a) { return push(unary(OpKind::l2norm, a)); }
NodeId GraphBuilder::softmax_xent(NodeId logits, NodeId labels) {
    return push(binary(OpKind::softmax_xent, logits, labels));
}
NodeId GraphBuilder::sigmoid_xent(NodeId logits, NodeId targets) {
    return push(binary(OpKind::sigmoid_xent, logits, targets));
}

Graph GraphBuilder::build(NodeId output) && {
    if (output < 0 || output >= static_cast<NodeId>(nodes_.size())) throw GraphError("build: invalid output node");
    Graph g;
    g.nodes_ = std::move(nodes_);
    g.output_ = output;
    return g;
}

// ---------------------------------------------------------------------------
// Evaluation

Inputs& Inputs::bind(std::string name, const Tensor& tensor) {
    bound_[std::move(name)] = &tensor;
    return *this;
}

const Tensor* Inputs::find(std::string_view name) const {
    auto it = bound_.find(name);
    return it == bound_.end() ? nullptr : it->second;
}

namespace {

[[noreturn]] void fail(NodeId id, const Node& node, const std::string& what) {
    throw GraphError("node " + std::to_string(id) + " (" + std::string(op_name(node.kind)) + "): " + what);
}

void require_same_shape(NodeId id, const Node& node, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail(id, node, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Per-row label lookup shared by forward and backward passes.
Index label_at(NodeId id, const Node& node, const Tensor& labels, Index row, Index classes) {
    const double v = labels.values()[row];
    const auto k = static_cast<Index>(v);
    if (static_cast<double>(k) != v || k < 0 || k >= classes)
        fail(id, node, "label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    return k;
}

Tensor forward_node(NodeId id, const Node& node, const std::vector<Tensor>& values, const Inputs& inputs) {
    auto arg = [&](std::size_t i) -> const Tensor& { return values[static_cast<std::size_t>(node.parents[i])]; };
    switch (node.kind) {
        case OpKind::input: {
            const Tensor* t = inputs.find(node.name);
            if (!t) fail(id, node, "input '" + node.name + "' is not bound");
            return *t;
        }
        case OpKind::constant:
            return node.value;
        case OpKind::affine: {
            const Tensor& x = arg(0);
            const Tensor& p = arg(1);
            if (x.cols() != node.in_dim)
                fail(id, node, "input has " + std::to_string(x.cols()) + " columns, expected " +
                                   std::to_string(node.in_dim));
            if (node.offset + node.out_dim * (node.in_dim + 1) > p.size())
                fail(id, node, "parameter vector of length " + std::to_string(p.size()) + " is too short");
            Eigen::Map<const RowMatrix> w(p.values().data() + node.offset, node.out_dim, node.in_dim);
            Eigen::Map<const Eigen::RowVectorXd> b(p.values().data() + node.offset + node.out_dim * node.in_dim,
                                                   node.out_dim);
            RowMatrix y = x.as_matrix() * w.transpose();
            y.rowwise() += b;
            std::vector<Index> shape = x.shape();
            shape.back() = node.out_dim;
            return Tensor(std::move(shape), Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()));
        }
        case OpKind::relu: {
            Tensor out = arg(0);
            out.values() = out.values().cwiseMax(0.0);
            return out;
        }
        case OpKind::sine: {
            Tensor out = arg(0);
            out.values() = out.values().array().sin().matrix();
            return out;
        }
        case OpKind::add: {
            require_same_shape(id, node, arg(0), arg(1));
            Tensor out = arg(0);
            out.values() += arg(1).values();
            return out;
        }
        case OpKind::mul: {
            require_same_shape(id, node, arg(0), arg(1));
            Tensor out = arg(0);
            out.values() = out.values().cwiseProduct(arg(1).values());
            return out;
        }
        case OpKind::sum:
            return Tensor::scalar(arg(0).values().sum());
        case OpKind::l2norm: {
            const Tensor& a = arg(0);
            Eigen::VectorXd norms = a.as_matrix().rowwise().norm();
            std::vector<Index> shape = a.shape();
            shape.back() = 1;
            return Tensor(std::move(shape), std::move(norms));
        }
        case OpKind::softmax_xent: {
            const Tensor& logits = arg(0);
            const Tensor& labels = arg(1);
            if (labels.size() != logits.rows())
                fail(id, node, "expected " + std::to_string(logits.rows()) + " labels, got " +
                                   std::to_string(labels.size()));
            const auto l = logits.as_matrix();
            double total = 0.0;
            for (Index r = 0; r < l.rows(); ++r) {
                const Index k = label_at(id, node, labels, r, l.cols());
                total += log_sum_exp(l.row(r)) - l(r, k);
            }
            return Tensor::scalar(total);
        }
        case OpKind::sigmoid_xent: {
            const Tensor& logits = arg(0);
            const Tensor& targets = arg(1);
            if (targets.size() != logits.size())
                fail(id, node, "expected " + std::to_string(logits.size()) + " targets, got " +
                                   std::to_string(targets.size()));
            const auto& z = logits.values().array();
            const auto& t = targets.values().array();
            if ((t < 0.0).any() || (t > 1.0).any()) fail(id, node, "targets must lie in [0, 1]");
            const double total = (z.max(0.0) - t * z + (-z.abs()).exp().log1p()).sum();
            return Tensor::scalar(total);
        }
    }
    fail(id, node, "unknown op");
}

}  // namespace

Evaluation evaluate(const Graph& graph, const Inputs& inputs) {
    Evaluation eval;
    eval.graph_ = &graph;
    const auto& nodes = graph.nodes();
    eval.values_.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto id = static_cast<NodeId>(i);
        Tensor v = forward_node(id, nodes[i], eval.values_, inputs);
        if (!v.values().allFinite()) fail(id, nodes[i], "non-finite value");
        eval.values_.push_back(std::move(v));
    }
    return eval;
}

Tensor eval_forward(const Graph& graph, const Inputs& inputs) { return evaluate(graph, inputs).output(); }

Tensor backward(const Evaluation& eval, std::string_view wrt) {
    const Graph& graph = eval.graph();
    const auto& nodes = graph.nodes();
    const NodeId out = graph.output();
    if (eval.output().size() != 1)
        throw GraphError("gradient requires a scalar output, got shape " + shape_string(eval.output().shape()));

    NodeId target = -1;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].kind == OpKind::input && nodes[i].name == wrt) target = static_cast<NodeId>(i);
    if (target < 0) throw GraphError("gradient target '" + std::string(wrt) + "' is not an input of the graph");

    // Only propagate through nodes that depend on the target.
    std::vector<char> live(nodes.size(), 0);
    live[static_cast<std::size_t>(target)] = 1;
    for (std::size_t i = static_cast<std::size_t>(target) + 1; i < nodes.size(); ++i)
        for (NodeId p : nodes[i].parents)
            if (live[static_cast<std::size_t>(p)]) live[i] = 1;

    const Tensor& target_value = eval.value(target);
    if (!live[static_cast<std::size_t>(out)]) return Tensor::zeros(target_value.shape());

    std::vector<Eigen::VectorXd> adj(nodes.size());
    auto accumulate = [&](NodeId p, const Eigen::VectorXd& g) {
        auto& a = adj[static_cast<std::size_t>(p)];
        if (a.size() == 0) a = g;
        else a += g;
    };
    adj[static_cast<std::size_t>(out)] = Eigen::VectorXd::Ones(1);

    for (auto i = static_cast<std::ptrdiff_t>(out); i > target; --i) {
        const auto idx = static_cast<std::size_t>(i);
        const Node& node = nodes[idx];
        if (!live[idx] || adj[idx].size() == 0) continue;
        const Eigen::VectorXd& up = adj[idx];
        auto arg = [&](std::size_t k) -> const Tensor& { return eval.value(node.parents[k]); };
        auto wants = [&](std::size_t k) { return live[static_cast<std::size_t>(node.parents[k])] != 0; };

        switch (node.kind) {
            case OpKind::input:
            case OpKind::constant:
                break;
            case OpKind::affine: {
                const Tensor& x = arg(0);
                const Tensor& p = arg(1);
                Eigen::Map<const RowMatrix> dy(up.data(), x.rows(), node.out_dim);
                Eigen::Map<const RowMatrix> w(p.values().data() + node.offset, node.out_dim, node.in_dim);
                if (wants(0)) {
                    Eigen::VectorXd dx(x.size());
                    Eigen::Map<RowMatrix>(dx.data(), x.rows(), node.in_dim).noalias() = dy * w;
                    accumulate(node.parents[0], dx);
                }
                if (wants(1)) {
                    Eigen::VectorXd dp = Eigen::VectorXd::Zero(p.size());
                    Eigen::Map<RowMatrix>(dp.data() + node.offset, node.out_dim, node.in_dim).noalias() =
                        dy.transpose() * x.as_matrix();
                    dp.segment(node.offset + node.out_dim * node.in_dim, node.out_dim) =
                        dy.colwise().sum().transpose();
                    accumulate(node.parents[1], dp);
                }
                break;
            }
            case OpKind::relu:
                if (wants(0))
                    accumulate(node.parents[0],
                               (arg(0).values().array() > 0.0).select(up, Eigen::VectorXd::Zero(up.size())));
                break;
            case OpKind::sine:
                if (wants(0)) accumulate(node.parents[0], up.cwiseProduct(arg(0).values().array().cos().matrix()));
                break;
            case OpKind::add:
                if (wants(0)) accumulate(node.parents[0], up);
                if (wants(1)) accumulate(node.parents[1], up);
                break;
            case OpKind::mul:
                if (wants(0)) accumulate(node.parents[0], up.cwiseProduct(arg(1).values()));
                if (wants(1)) accumulate(node.parents[1], up.cwiseProduct(arg(0).values()));
                break;
            case OpKind::sum:
                if (wants(0)) accumulate(node.parents[0], Eigen::VectorXd::Constant(arg(0).size(), up[0]));
                break;
            case OpKind::l2norm: {
                if (!wants(0)) break;
                const Tensor& a = arg(0);
                const Tensor& norms = eval.value(static_cast<NodeId>(i));
                Eigen::VectorXd g(a.size());
                Eigen::Map<RowMatrix> gm(g.data(), a.rows(), a.cols());
                const auto am = a.as_matrix();
                for (Index r = 0; r < a.rows(); ++r) {
                    const double n = norms.values()[r];
                    if (n > 0.0) gm.row(r) = am.row(r) * (up[r] / n);
                    else gm.row(r).setZero();
                }
                accumulate(node.parents[0], g);
                break;
            }
            case OpKind::softmax_xent: {
                if (!wants(0)) break;
                const Tensor& logits = arg(0);
                const Tensor& labels = arg(1);
                const auto l = logits.as_matrix();
                Eigen::VectorXd g(logits.size());
                Eigen::Map<RowMatrix> gm(g.data(), l.rows(), l.cols());
                for (Index r = 0; r < l.rows(); ++r) {
                    const Eigen::RowVectorXd e = (l.row(r).array() - l.row(r).maxCoeff()).exp();
                    gm.row(r) = e / e.sum();
                    gm(r, label_at(static_cast<NodeId>(i), node, labels, r, l.cols())) -= 1.0;
                }
                accumulate(node.parents[0], g * up[0]);
                break;
            }
            case OpKind::sigmoid_xent: {
                if (!wants(0)) break;
                const auto& z = arg(0).values().array();
                const Eigen::VectorXd sig = (1.0 / (1.0 + (-z).exp())).matrix();
                accumulate(node.parents[0], (sig - arg(1).values()) * up[0]);
                break;
            }
        }
    }

    const auto& g = adj[static_cast<std::size_t>(target)];
    if (g.size() == 0) return Tensor::zeros(target_value.shape());
    return Tensor(target_value.shape(), g);
}

Tensor grad(const Graph& graph, const Inputs& inputs, std::string_view wrt) {
    return backward(evaluate(graph, inputs), wrt);
}

ValueAndGrad value_and_grad(const Graph& graph, const Inputs& inputs, std::string_view wrt) {
    const Evaluation eval = evaluate(graph, inputs);
    ValueAndGrad out;
    out.gradient = backward(eval, wrt);
    out.value = eval.output().item();
    return out;
}

double finite_diff_check(const Graph& graph, const Inputs& inputs, std::string_view wrt, double step) {
    if (!(step > 0.0)) throw GraphError("finite_diff_check: step must be positive");
    const Tensor* base = inputs.find(wrt);
    if (!base) throw GraphError("finite_diff_check: input '" + std::string(wrt) + "' is not bound");

    const Tensor analytic = grad(graph, inputs, wrt);
    Tensor probe = *base;
    Inputs shifted = inputs;
    shifted.bind(std::string(wrt), probe);

    double worst = 0.0;
    for (Index i = 0; i < probe.size(); ++i) {
        const double x0 = probe.values()[i];
        probe.values()[i] = x0 + step;
        const double up = eval_forward(graph, shifted).item();
        probe.values()[i] = x0 - step;
        const double down = eval_forward(graph, shifted).item();
        probe.values()[i] = x0;
        const double central = (up - down) / (2.0 * step);
        const double a = analytic.values()[i];
        worst = std::max(worst, std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12));
    }
    return worst;
}

}  // namespace uqadv
