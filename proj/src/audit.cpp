#include "uqadv/audit.hpp"

#include <algorithm>
#include <numeric>

#include "uqadv/uncertainty.hpp"

namespace uqadv {

namespace {

struct Verdict {
    int cls = 0;
    double confidence = 0.0;
};

Verdict verdict(const Eigen::VectorXd& mean_probs) {
    Index i = 0;
    const double c = mean_probs.maxCoeff(&i);
    return {static_cast<int>(i), c};
}

}  // namespace

bool is_high_confidence(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, double epsilon) {
    return verdict(predictive(ensemble, x).mean_probs).confidence > 1.0 - epsilon;
}

DeltaBallEstimate estimate_delta_ball(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, double epsilon,
                                      int probes, const std::vector<double>& radius_schedule, std::uint64_t seed) {
    if (probes < 1) throw Error("delta ball: need at least one probe");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error("delta ball: epsilon must lie in (0, 0.5)");
    for (double r : radius_schedule)
        if (!(r >= 0.0)) throw Error("delta ball: radii must be non-negative");
    const Verdict centre = verdict(predictive(ensemble, x).mean_probs);
    if (!(centre.confidence > 1.0 - epsilon))
        throw Error("delta ball: input is not predicted with high confidence");

    DeltaBallEstimate est;
    est.centre = x;
    est.probes = probes;
    est.epsilon = epsilon;
    est.predicted = centre.cls;

    // Largest radius first; the first radius that passes is the answer.
    std::vector<std::size_t> order(radius_schedule.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return radius_schedule[a] > radius_schedule[b]; });
    for (std::size_t idx : order) {
        const double r = radius_schedule[idx];
        Rng rng(derive_seed(seed, "delta-probes", idx));
        RowMatrix pts(probes, x.size());
        for (int p = 0; p < probes; ++p) {
            Eigen::VectorXd d = standard_normal(x.size(), rng);
            const double n = d.norm();
            pts.row(p) = (x + (n > 0.0 ? Eigen::VectorXd(d * (r / n)) : Eigen::VectorXd::Zero(x.size()))).transpose();
        }
        bool all = true;
        for (const auto& pd : predictive_batch(ensemble, pts)) {
            const Verdict v = verdict(pd.mean_probs);
            if (v.cls != centre.cls || !(v.confidence > 1.0 - epsilon)) {
                all = false;
                break;
            }
        }
        if (all) {
            est.delta = r;
            break;
        }
    }
    return est;
}

std::vector<DeltaBallEstimate> estimate_delta_balls(const PosteriorEnsemble& ensemble, const RowMatrix& train_inputs,
                                                    double epsilon, int probes,
                                                    const std::vector<double>& radius_schedule, std::uint64_t seed) {
    std::vector<DeltaBallEstimate> out;
    out.reserve(static_cast<std::size_t>(train_inputs.rows()));
    const auto preds = predictive_batch(ensemble, train_inputs);
    for (Index i = 0; i < train_inputs.rows(); ++i) {
        const Eigen::VectorXd x = train_inputs.row(i).transpose();
        if (verdict(preds[static_cast<std::size_t>(i)].mean_probs).confidence > 1.0 - epsilon) {
            out.push_back(estimate_delta_ball(ensemble, x, epsilon, probes, radius_schedule,
                                              derive_seed(seed, "delta-ball", static_cast<std::uint64_t>(i))));
        } else {
            DeltaBallEstimate e;
            e.centre = x;
            e.epsilon = epsilon;
            e.probes = 0;
            e.predicted = verdict(preds[static_cast<std::size_t>(i)].mean_probs).cls;
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::vector<bool> inside_delta_balls(const RowMatrix& points, const std::vector<DeltaBallEstimate>& balls) {
    std::vector<const DeltaBallEstimate*> live;
    for (const auto& b : balls)
        if (b.delta > 0.0) live.push_back(&b);
    std::vector<bool> inside(static_cast<std::size_t>(points.rows()), false);
    if (live.empty()) return inside;
    RowMatrix centres(static_cast<Index>(live.size()), points.cols());
    Eigen::VectorXd r2(static_cast<Index>(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i) {
        centres.row(static_cast<Index>(i)) = live[i]->centre.transpose();
        r2[static_cast<Index>(i)] = live[i]->delta * live[i]->delta;
    }
    for (Index p = 0; p < points.rows(); ++p) {
        const Eigen::VectorXd d2 = (centres.rowwise() - points.row(p)).rowwise().squaredNorm();
        inside[static_cast<std::size_t>(p)] = ((d2 - r2).array() <= 0.0).any();
    }
    return inside;
}

IdealisedAudit idealised_audit(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                               const std::vector<bool>& inside, double epsilon, std::string method) {
    if (static_cast<Index>(inside.size()) != grid.size()) throw Error("audit: membership does not cover the grid");
    IdealisedAudit a;
    a.method = std::move(method);
    a.epsilon = epsilon;
    a.h_eps = high_confidence_threshold(epsilon);
    const auto preds = predictive_batch(ensemble, grid.inputs);
    for (Index i = 0; i < grid.size(); ++i) {
        AuditPoint p;
        p.grid_index = i;
        p.mutual_information = mutual_information(preds[static_cast<std::size_t>(i)], ensemble.weights).mutual_information;
        p.inside = inside[static_cast<std::size_t>(i)];
        if (!p.inside) {
            ++a.outside_count;
            if (p.mutual_information > a.h_eps) ++a.outside_above;
        }
        a.points.push_back(p);
    }
    a.fraction_outside_above =
        a.outside_count ? static_cast<double>(a.outside_above) / static_cast<double>(a.outside_count) : 0.0;
    return a;
}

IdealisedAudit idealised_audit(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                               const std::vector<DeltaBallEstimate>& delta_estimates, double epsilon,
                               std::string method) {
    return idealised_audit(ensemble, grid, inside_delta_balls(grid.inputs, delta_estimates), epsilon,
                           std::move(method));
}

}  // namespace uqadv
