#pragma once

// Empirical audits of the idealised-model conditions: sampled delta-ball
// certification around confident training points, and the off-ball
// uncertainty check against the binary-entropy floor H(eps).

#include <string>
#include <vector>

#include "uqadv/inference.hpp"
#include "uqadv/manifold.hpp"

namespace uqadv {

struct DeltaBallEstimate {
    Eigen::VectorXd centre;
    double delta = 0.0;  // input-space L2 radius
    int probes = 0;
    double epsilon = 0.0;
    int predicted = 0;
};

/// Largest radius r in `radius_schedule` such that every one of `probes` points drawn uniformly
/// on the sphere of radius r around x keeps the same argmax with max mean probability > 1 - eps.
/// Probe directions depend only on (seed, schedule position), so the same probes are reused
/// across epsilons. Throws unless x itself is predicted with max probability > 1 - eps.
DeltaBallEstimate estimate_delta_ball(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, double epsilon,
                                      int probes, const std::vector<double>& radius_schedule, std::uint64_t seed);

/// True when max mean probability at x exceeds 1 - eps.
bool is_high_confidence(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, double epsilon);

/// Delta balls for every row of `train_inputs`; rows that are not high-confidence get delta = 0.
std::vector<DeltaBallEstimate> estimate_delta_balls(const PosteriorEnsemble& ensemble, const RowMatrix& train_inputs,
                                                    double epsilon, int probes,
                                                    const std::vector<double>& radius_schedule, std::uint64_t seed);

/// Membership of each row of `points` in the union of the balls.
std::vector<bool> inside_delta_balls(const RowMatrix& points, const std::vector<DeltaBallEstimate>& balls);

struct AuditPoint {
    Index grid_index = 0;
    double mutual_information = 0.0;
    bool inside = false;
};

struct IdealisedAudit {
    std::string method;
    double epsilon = 0.0;
    double h_eps = 0.0;
    Index outside_count = 0;
    Index outside_above = 0;
    double fraction_outside_above = 0.0;  // of outside points, those with MI > H(eps)
    std::vector<AuditPoint> points;
};

IdealisedAudit idealised_audit(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                               const std::vector<DeltaBallEstimate>& delta_estimates, double epsilon,
                               std::string method = {});

/// Same, with the inside/outside split supplied (e.g. shared across methods).
IdealisedAudit idealised_audit(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                               const std::vector<bool>& inside, double epsilon, std::string method = {});

}  // namespace uqadv
