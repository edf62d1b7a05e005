#include "uqadv/netmodel.hpp"

#include <cmath>
#include <string>

namespace uqadv {

void NetworkSpec::validate() const {
    if (input_dim <= 0) throw Error("network spec: input_dim must be positive");
    if (num_classes < 2) throw Error("network spec: num_classes must be at least 2");
    for (Index h : hidden_sizes)
        if (h <= 0) throw Error("network spec: hidden sizes must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("network spec: dropout_rate must lie in [0, 1)");
}

Index NetworkSpec::param_count() const {
    Index count = 0;
    Index in = feature_dim();
    for (Index h : hidden_sizes) {
        count += h * in + h;
        in = h;
    }
    return count + num_classes * in + num_classes;
}

ParamVector make_params(const NetworkSpec& spec, Eigen::VectorXd values) {
    spec.validate();
    if (values.size() != spec.param_count())
        throw Error("parameter vector has length " + std::to_string(values.size()) + ", spec needs " +
                    std::to_string(spec.param_count()));
    if (!values.allFinite()) throw Error("parameter vector contains non-finite values");
    return {std::make_shared<const NetworkSpec>(spec), std::move(values)};
}

namespace {

struct LayerShape {
    Index in;
    Index out;
    Index offset;
};

std::vector<LayerShape> layer_shapes(const NetworkSpec& spec) {
    std::vector<LayerShape> shapes;
    Index in = spec.feature_dim();
    Index offset = 0;
    auto push = [&](Index out) {
        shapes.push_back({in, out, offset});
        offset += out * in + out;
        in = out;
    };
    for (Index h : spec.hidden_sizes) push(h);
    push(spec.num_classes);
    return shapes;
}

void check_length(const ParamVector& params) {
    if (!params.spec) throw Error("parameter vector has no spec");
    if (params.values.size() != params.spec->param_count())
        throw Error("parameter vector has length " + std::to_string(params.values.size()) + ", spec needs " +
                    std::to_string(params.spec->param_count()));
}

}  // namespace

std::vector<LayerParams> unflatten(const ParamVector& params) {
    check_length(params);
    std::vector<LayerParams> layers;
    for (const LayerShape& s : layer_shapes(*params.spec)) {
        LayerParams lp;
        lp.weights = Eigen::Map<const RowMatrix>(params.values.data() + s.offset, s.out, s.in);
        lp.bias = params.values.segment(s.offset + s.out * s.in, s.out);
        layers.push_back(std::move(lp));
    }
    return layers;
}

ParamVector flatten(std::shared_ptr<const NetworkSpec> spec, const std::vector<LayerParams>& layers) {
    const auto shapes = layer_shapes(*spec);
    if (layers.size() != shapes.size()) throw Error("flatten: wrong number of layers");
    Eigen::VectorXd values(spec->param_count());
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const LayerShape& s = shapes[l];
        if (layers[l].weights.rows() != s.out || layers[l].weights.cols() != s.in || layers[l].bias.size() != s.out)
            throw Error("flatten: layer " + std::to_string(l) + " has the wrong shape");
        Eigen::Map<RowMatrix>(values.data() + s.offset, s.out, s.in) = layers[l].weights;
        values.segment(s.offset + s.out * s.in, s.out) = layers[l].bias;
    }
    return {std::move(spec), std::move(values)};
}

ParamVector param_roundtrip(const ParamVector& params) { return flatten(params.spec, unflatten(params)); }

DropoutMask sample_mask(const NetworkSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution keep(1.0 - spec.dropout_rate);
    DropoutMask mask;
    mask.seed = seed;
    for (Index h : spec.hidden_sizes) {
        Eigen::VectorXd k(h);
        for (Index i = 0; i < h; ++i) k[i] = keep(rng) ? 1.0 : 0.0;
        mask.keep.push_back(std::move(k));
    }
    return mask;
}

DropoutMask full_mask(const NetworkSpec& spec) {
    DropoutMask mask;
    for (Index h : spec.hidden_sizes) mask.keep.push_back(Eigen::VectorXd::Ones(h));
    return mask;
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::normal_distribution<double> normal;
    Eigen::VectorXd values = Eigen::VectorXd::Zero(spec.param_count());
    for (const LayerShape& s : layer_shapes(spec)) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.in));
        for (Index i = 0; i < s.out * s.in; ++i) values[s.offset + i] = scale * normal(rng);
    }
    return {std::make_shared<const NetworkSpec>(spec), std::move(values)};
}

namespace {

NodeId build_logits(GraphBuilder& b, const NetworkSpec& spec, bool with_masks) {
    spec.validate();
    NodeId h = b.input("x");
    const NodeId params = b.input("params");
    if (spec.feature_mode == FeatureMode::radial) h = b.l2norm(h);
    const auto shapes = layer_shapes(spec);
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        h = b.affine(h, params, shapes[l].offset, shapes[l].in, shapes[l].out);
        if (l + 1 == shapes.size()) break;
        h = spec.activation == Activation::relu ? b.relu(h) : b.sine(h);
        if (with_masks) h = b.mul(h, b.input("mask" + std::to_string(l)));
    }
    return h;
}

}  // namespace

Graph build_logits_graph(const NetworkSpec& spec, bool with_masks) {
    GraphBuilder b;
    const NodeId out = build_logits(b, spec, with_masks);
    return std::move(b).build(out);
}

Graph build_loss_graph(const NetworkSpec& spec, bool with_masks, double loss_scale, double weight_decay) {
    GraphBuilder b;
    const NodeId logits = build_logits(b, spec, with_masks);
    NodeId loss = b.softmax_xent(logits, b.input("labels"));
    if (loss_scale != 1.0) loss = b.mul(loss, b.constant(Tensor::scalar(loss_scale)));
    if (weight_decay != 0.0) {
        const NodeId p = b.input("params");
        const NodeId sq = b.sum(b.mul(p, p));
        loss = b.add(loss, b.mul(sq, b.constant(Tensor::scalar(0.5 * weight_decay))));
    }
    return std::move(b).build(loss);
}

std::vector<Tensor> mask_tensors(const NetworkSpec& spec, const DropoutMask& mask, Index rows) {
    if (mask.keep.size() != spec.hidden_sizes.size()) throw Error("dropout mask does not match the network spec");
    const double keep_rate = 1.0 - spec.dropout_rate;
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < mask.keep.size(); ++l) {
        const Eigen::VectorXd& k = mask.keep[l];
        if (k.size() != spec.hidden_sizes[l]) throw Error("dropout mask does not match the network spec");
        RowMatrix m = (k / keep_rate).transpose().replicate(rows, 1);
        out.push_back(Tensor::matrix(m));
    }
    return out;
}

RowMatrix forward_logits_batch(const ParamVector& params, const RowMatrix& inputs, const DropoutMask* mask) {
    check_length(params);
    const NetworkSpec& spec = *params.spec;
    if (inputs.cols() != spec.input_dim)
        throw Error("input has dimension " + std::to_string(inputs.cols()) + ", network expects " +
                    std::to_string(spec.input_dim));
    const Graph g = build_logits_graph(spec, mask != nullptr);
    const Tensor x = Tensor::matrix(inputs);
    const Tensor p = Tensor::vector(params.values);
    Inputs in;
    in.bind("x", x).bind("params", p);
    std::vector<Tensor> masks;
    if (mask) masks = mask_tensors(spec, *mask, inputs.rows());
    for (std::size_t l = 0; l < masks.size(); ++l) in.bind("mask" + std::to_string(l), masks[l]);
    return eval_forward(g, in).as_matrix();
}

Eigen::VectorXd forward_logits(const ParamVector& params, const Eigen::VectorXd& x, const DropoutMask* mask) {
    RowMatrix row = x.transpose();
    return forward_logits_batch(params, row, mask).row(0).transpose();
}

RowMatrix predict_probs_rows(const RowMatrix& logits) {
    RowMatrix out(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) out.row(r) = predict_probs(logits.row(r).transpose()).transpose();
    return out;
}

InputGradient input_gradient(const ParamVector& params, const Eigen::VectorXd& x, Index label,
                             const DropoutMask* mask) {
    check_length(params);
    const NetworkSpec& spec = *params.spec;
    if (x.size() != spec.input_dim) throw Error("input dimension mismatch");
    const Graph g = build_loss_graph(spec, mask != nullptr, 1.0, 0.0);
    const Tensor xt({1, x.size()}, x);
    const Tensor p = Tensor::vector(params.values);
    const Tensor labels = Tensor::scalar(static_cast<double>(label));
    Inputs in;
    in.bind("x", xt).bind("params", p).bind("labels", labels);
    std::vector<Tensor> masks;
    if (mask) masks = mask_tensors(spec, *mask, 1);
    for (std::size_t l = 0; l < masks.size(); ++l) in.bind("mask" + std::to_string(l), masks[l]);

    const Evaluation eval = evaluate(g, in);
    InputGradient out;
    out.loss = eval.output().item();
    out.gradient = backward(eval, "x").values();
    // The logits are the first parent of the softmax_xent node.
    for (const Node& n : g.nodes())
        if (n.kind == OpKind::softmax_xent) out.probs = predict_probs(eval.value(n.parents[0]).values());
    return out;
}

}  // namespace uqadv
