#pragma once

#include <optional>
#include <vector>

#include "uqadv/attacks.hpp"

namespace uqadv {

/// Fraction of successful trajectories.
double success_rate(const std::vector<AttackTrajectory>& trajectories);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct DetectionResult {
    std::vector<double> scores;
    std::vector<bool> is_adversarial;
    std::vector<RocPoint> roc;  // from (0, 0) to (1, 1)
    double auc = 0.0;
};

/// Sweeps "score >= threshold => adversarial" over every distinct score. Trapezoidal AUC,
/// which gives tied positive/negative pairs half credit. Throws unless both classes occur.
DetectionResult roc_auc(const std::vector<double>& scores, const std::vector<bool>& is_adversarial);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& xs);

/// Rank correlation. Throws on unequal/empty input or zero rank variance.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

double mean(const std::vector<double>& xs);
double median(std::vector<double> xs);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(const std::vector<double>& xs);

struct DensityBin {
    double lo = 0.0;
    double hi = 0.0;
    Index count = 0;
    double accuracy = 0.0;  // fraction of points still predicted as the clean class
};

struct DensityTrajectorySummary {
    std::vector<double> step_mean;
    std::vector<double> step_median;
    std::vector<std::optional<double>> trajectory_rho;  // Spearman(step, density); nullopt = excluded
    Index excluded = 0;
    double median_rho = 0.0;  // over included trajectories; NaN if none
    double fraction_final_below_initial = 0.0;
    std::vector<DensityBin> accuracy_by_density;
};

/// Requires every trajectory to carry densities and all to have equal length.
DensityTrajectorySummary density_trajectory_report(const std::vector<AttackTrajectory>& trajectories,
                                                   int density_bins = 5);

}  // namespace uqadv
