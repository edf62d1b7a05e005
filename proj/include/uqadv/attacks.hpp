#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uqadv/inference.hpp"
#include "uqadv/manifold.hpp"

namespace uqadv {

enum class AttackNorm { linf, l2 };

enum class GradientSource {
    fixed_member,            // always member `fixed_member`
    fresh_posterior_sample,  // a newly drawn member for every gradient evaluation
    ensemble_mean,           // cross-entropy of the weighted mean prediction
};

struct AttackConfig {
    double epsilon = 0.1;
    /// Per-iteration step; <= 0 selects epsilon / iterations.
    double step_size = 0.0;
    int iterations = 10;
    double momentum = 1.0;
    AttackNorm norm = AttackNorm::linf;
    GradientSource gradient_source = GradientSource::ensemble_mean;
    Index fixed_member = 0;
    /// Per-coordinate input range; empty vectors disable clipping.
    Eigen::VectorXd clip_lo;
    Eigen::VectorXd clip_hi;
    std::uint64_t seed = 0;

    void validate() const;
    double alpha() const { return step_size > 0.0 ? step_size : epsilon / iterations; }
};

/// Per-coordinate min/max of the rows of `inputs`.
void set_clip_from_data(AttackConfig& config, const RowMatrix& inputs);

struct AttackTrajectory {
    std::vector<Eigen::VectorXd> inputs;      // step 0 is the clean input
    std::vector<Eigen::VectorXd> mean_probs;
    std::vector<double> perturbation_norm;    // in the configured norm
    std::vector<double> mutual_information;
    std::optional<std::vector<double>> gt_log_density;
    int original_label = 0;                   // clean predicted class
    int final_label = 0;
    std::optional<int> target;
    bool success = false;

    std::size_t steps() const { return inputs.size(); }
    const Eigen::VectorXd& final_input() const { return inputs.back(); }
};

using DensityFn = std::function<double(const Eigen::VectorXd&)>;

/// Gradient of the attack loss at x for `label` under the configured gradient source.
/// `rng` feeds fresh_posterior_sample draws.
Eigen::VectorXd attack_gradient(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                                const AttackConfig& config, Rng& rng);

/// Single-step fast gradient method. The trajectory sweeps the step linearly over
/// `config.iterations` points from 0 to epsilon along the one gradient direction.
AttackTrajectory fgm(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                     const AttackConfig& config, std::optional<int> target = std::nullopt,
                     const DensityFn& density = {});

/// Momentum iterative method.
AttackTrajectory mim(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                     const AttackConfig& config, const DensityFn& density = {});

/// x plus uniform noise in [-epsilon, epsilon] per coordinate, clipped to range.
Eigen::VectorXd noise_control(const Eigen::VectorXd& x, const AttackConfig& config, Rng& rng);

struct GarbageCandidate {
    Index grid_index = 0;
    Eigen::Vector2d latent;
    Eigen::VectorXd input;
    double confidence = 0.0;  // max mean probability
    int predicted = 0;
    double mutual_information = 0.0;
    double distance = 0.0;    // latent L2 distance to the nearest training latent
};

/// Latent L2 distance from every grid latent to its nearest training latent.
Eigen::VectorXd nearest_latent_distance(const RowMatrix& grid_latents, const RowMatrix& train_latents);

/// Gradient-free search: keep grid points with MI <= mi_threshold, order by distance to the
/// nearest training latent (farthest first), return the first top_k.
std::vector<GarbageCandidate> latent_hole_attack(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                                                 const RowMatrix& train_latents, double mi_threshold,
                                                 std::size_t top_k);

/// Iterative L2-normalised gradient steps, each followed by renormalisation onto the sphere
/// of radius ||x||. Requires config.norm == l2 and epsilon >= 2||x|| (the whole sphere is in budget).
AttackTrajectory sphere_projected_attack(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                                         const AttackConfig& config);

/// CSV columns: step, linf_norm, pred_class, pred_prob, mi, gt_log_density.
std::string trajectory_csv(const AttackTrajectory& trajectory);
/// Several trajectories in one table, prefixed with a trajectory column.
std::string trajectories_csv(const std::vector<AttackTrajectory>& trajectories);

}  // namespace uqadv
