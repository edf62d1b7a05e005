#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "uqadv/common.hpp"
#include "uqadv/diffgraph.hpp"

namespace uqadv {

enum class Activation { relu, sine };
enum class FeatureMode { raw, radial };

struct NetworkSpec {
    Index input_dim = 1;
    std::vector<Index> hidden_sizes;
    Activation activation = Activation::relu;
    Index num_classes = 2;
    double dropout_rate = 0.0;
    /// radial: the network sees only ||x||_2.
    FeatureMode feature_mode = FeatureMode::raw;

    void validate() const;
    /// Width seen by the first affine layer.
    Index feature_dim() const { return feature_mode == FeatureMode::radial ? 1 : input_dim; }
    Index param_count() const;
    bool operator==(const NetworkSpec&) const = default;
};

/// Flat parameter vector. Layer l stores W_l (out x in, row-major) then b_l.
struct ParamVector {
    std::shared_ptr<const NetworkSpec> spec;
    Eigen::VectorXd values;

    const NetworkSpec& network() const { return *spec; }
};

ParamVector make_params(const NetworkSpec& spec, Eigen::VectorXd values);

struct LayerParams {
    RowMatrix weights;
    Eigen::VectorXd bias;
};

std::vector<LayerParams> unflatten(const ParamVector& params);
ParamVector flatten(std::shared_ptr<const NetworkSpec> spec, const std::vector<LayerParams>& layers);
/// flatten(unflatten(p)); bitwise identity.
ParamVector param_roundtrip(const ParamVector& params);

/// Per-hidden-unit keep indicators (0 or 1), one vector per hidden layer.
struct DropoutMask {
    std::vector<Eigen::VectorXd> keep;
    std::uint64_t seed = 0;

    bool operator==(const DropoutMask&) const = default;
};

DropoutMask sample_mask(const NetworkSpec& spec, std::uint64_t seed);
DropoutMask full_mask(const NetworkSpec& spec);

/// Zero-mean Gaussian weights with std 1/sqrt(fan_in); zero biases.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Graph inputs: "x" (N x D), "params", and "mask<l>" (N x H_l, entries keep/keep_rate)
/// when `with_masks`. Output: logits (N x K).
Graph build_logits_graph(const NetworkSpec& spec, bool with_masks);

/// Adds "labels" (N). Output: loss_scale * sum_n CE_n + (weight_decay / 2) ||params||^2.
Graph build_loss_graph(const NetworkSpec& spec, bool with_masks, double loss_scale, double weight_decay);

/// Expands a mask into the N-row scaled tensors bound as "mask<l>".
std::vector<Tensor> mask_tensors(const NetworkSpec& spec, const DropoutMask& mask, Index rows);

Eigen::VectorXd forward_logits(const ParamVector& params, const Eigen::VectorXd& x,
                               const DropoutMask* mask = nullptr);
RowMatrix forward_logits_batch(const ParamVector& params, const RowMatrix& inputs,
                               const DropoutMask* mask = nullptr);

/// Stabilised softmax over the coefficients of `logits`.
template <typename Derived>
Eigen::VectorXd predict_probs(const Eigen::MatrixBase<Derived>& logits) {
    const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    return (e / e.sum()).matrix();
}

/// Row-wise softmax.
RowMatrix predict_probs_rows(const RowMatrix& logits);

/// Cross-entropy -log softmax(f(x))[label] and its gradient with respect to x.
struct InputGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
    Eigen::VectorXd probs;
};

InputGradient input_gradient(const ParamVector& params, const Eigen::VectorXd& x, Index label,
                             const DropoutMask* mask = nullptr);

}  // namespace uqadv
