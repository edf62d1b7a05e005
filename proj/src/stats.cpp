#include "uqadv/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace uqadv {

double success_rate(const std::vector<AttackTrajectory>& trajectories) {
    if (trajectories.empty()) throw Error("success_rate: no trajectories");
    const auto hits = std::count_if(trajectories.begin(), trajectories.end(), [](const auto& t) { return t.success; });
    return static_cast<double>(hits) / static_cast<double>(trajectories.size());
}

DetectionResult roc_auc(const std::vector<double>& scores, const std::vector<bool>& is_adversarial) {
    if (scores.size() != is_adversarial.size()) throw Error("roc_auc: score/label length mismatch");
    const auto pos = std::count(is_adversarial.begin(), is_adversarial.end(), true);
    const auto neg = static_cast<std::ptrdiff_t>(is_adversarial.size()) - pos;
    if (pos == 0 || neg == 0) throw Error("roc_auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    DetectionResult r;
    r.scores = scores;
    r.is_adversarial = is_adversarial;
    r.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double tp = 0.0;
    double fp = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == t; ++i) (is_adversarial[order[i]] ? tp : fp) += 1.0;
        r.roc.push_back({t, fp / static_cast<double>(neg), tp / static_cast<double>(pos)});
    }
    for (std::size_t i = 1; i < r.roc.size(); ++i)
        r.auc += 0.5 * (r.roc[i].fpr - r.roc[i - 1].fpr) * (r.roc[i].tpr + r.roc[i - 1].tpr);
    return r;
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty()) throw Error("spearman: inputs must have equal nonzero length");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double mx = mean(rx);
    const double my = mean(ry);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("spearman: zero rank variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double mean(const std::vector<double>& xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double median(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

DensityTrajectorySummary density_trajectory_report(const std::vector<AttackTrajectory>& trajectories,
                                                   int density_bins) {
    if (trajectories.empty()) throw Error("density report: no trajectories");
    if (density_bins < 1) throw Error("density report: need at least one bin");
    const std::size_t steps = trajectories.front().steps();
    for (const auto& t : trajectories) {
        if (!t.gt_log_density) throw Error("density report: trajectory without densities");
        if (t.steps() != steps) throw Error("density report: trajectories differ in length");
    }

    DensityTrajectorySummary s;
    for (std::size_t k = 0; k < steps; ++k) {
        std::vector<double> col;
        for (const auto& t : trajectories) col.push_back((*t.gt_log_density)[k]);
        s.step_mean.push_back(mean(col));
        s.step_median.push_back(median(col));
    }

    std::vector<double> step_index(steps);
    std::iota(step_index.begin(), step_index.end(), 0.0);
    std::vector<double> included;
    Index below = 0;
    for (const auto& t : trajectories) {
        const auto& d = *t.gt_log_density;
        if (d.back() < d.front()) ++below;
        try {
            const double rho = spearman(step_index, d);
            s.trajectory_rho.emplace_back(rho);
            included.push_back(rho);
        } catch (const Error&) {
            s.trajectory_rho.emplace_back(std::nullopt);
            ++s.excluded;
        }
    }
    s.median_rho = median(included);
    s.fraction_final_below_initial = static_cast<double>(below) / static_cast<double>(trajectories.size());

    // Accuracy versus density over all trajectory points, equal-count bins.
    std::vector<std::pair<double, bool>> points;
    for (const auto& t : trajectories)
        for (std::size_t k = 0; k < steps; ++k) {
            Index cls = 0;
            t.mean_probs[k].maxCoeff(&cls);
            points.emplace_back((*t.gt_log_density)[k], cls == t.original_label);
        }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t per = (points.size() + static_cast<std::size_t>(density_bins) - 1) /
                            static_cast<std::size_t>(density_bins);
    for (std::size_t start = 0; start < points.size(); start += per) {
        const std::size_t end = std::min(points.size(), start + per);
        DensityBin b;
        b.lo = points[start].first;
        b.hi = points[end - 1].first;
        b.count = static_cast<Index>(end - start);
        std::size_t ok = 0;
        for (std::size_t i = start; i < end; ++i) ok += points[i].second ? 1 : 0;
        b.accuracy = static_cast<double>(ok) / static_cast<double>(end - start);
        s.accuracy_by_density.push_back(b);
    }
    return s;
}

}  // namespace uqadv
