#include "uqadv/uncertainty.hpp"

#include <cmath>

namespace uqadv {

UncertaintyReport mutual_information(const PredictiveDistribution& pd, const Eigen::VectorXd& weights) {
    if (weights.size() != pd.member_probs.rows()) throw Error("mutual_information: weight count mismatch");
    UncertaintyReport r;
    r.predictive_entropy = entropy(pd.mean_probs);
    for (Index m = 0; m < pd.member_probs.rows(); ++m)
        r.expected_entropy += weights[m] * entropy(pd.member_probs.row(m));
    const double mi = r.predictive_entropy - r.expected_entropy;
    r.mutual_information = (mi < 0.0 && mi > -1e-12) ? 0.0 : mi;
    return r;
}

UncertaintyReport mutual_information(const PredictiveDistribution& pd) {
    const Index m = pd.member_probs.rows();
    return mutual_information(pd, Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)));
}

double high_confidence_threshold(double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error("high_confidence_threshold: epsilon must lie in (0, 0.5)");
    return -epsilon * std::log(epsilon) - (1.0 - epsilon) * std::log1p(-epsilon);
}

}  // namespace uqadv
