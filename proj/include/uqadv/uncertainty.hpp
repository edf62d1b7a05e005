#pragma once

// Entropy and mutual information over predictive distributions, in nats.

#include "uqadv/inference.hpp"

namespace uqadv {

inline constexpr const char* kEntropyUnit = "nats";

/// -sum p ln p with 0 ln 0 = 0.
template <typename Derived>
double entropy(const Eigen::MatrixBase<Derived>& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        const double v = p.derived().coeff(i);
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

struct UncertaintyReport {
    double predictive_entropy = 0.0;
    double expected_entropy = 0.0;
    double mutual_information = 0.0;
};

/// H[mean] - E_w[H[member]], clamped at zero when negative by rounding only.
UncertaintyReport mutual_information(const PredictiveDistribution& pd, const Eigen::VectorXd& weights);
/// Uniform member weights.
UncertaintyReport mutual_information(const PredictiveDistribution& pd);

/// Binary entropy H(eps) of the high-confidence threshold; eps in (0, 0.5).
double high_confidence_threshold(double epsilon);

}  // namespace uqadv
