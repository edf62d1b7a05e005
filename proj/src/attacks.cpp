#include "uqadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uqadv/io.hpp"
#include "uqadv/uncertainty.hpp"

namespace uqadv {

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0)) throw Error("attack config: epsilon must be >= 0");
    if (iterations < 1) throw Error("attack config: iterations must be >= 1");
    if (!(momentum >= 0.0)) throw Error("attack config: momentum must be >= 0");
    if (clip_lo.size() != clip_hi.size()) throw Error("attack config: clip bounds differ in length");
    if ((clip_lo.array() > clip_hi.array()).any()) throw Error("attack config: clip_lo exceeds clip_hi");
}

void set_clip_from_data(AttackConfig& config, const RowMatrix& inputs) {
    config.clip_lo = inputs.colwise().minCoeff().transpose();
    config.clip_hi = inputs.colwise().maxCoeff().transpose();
}

namespace {

int argmax(const Eigen::VectorXd& v) {
    Index i = 0;
    v.maxCoeff(&i);
    return static_cast<int>(i);
}

void check_input(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, const AttackConfig& config) {
    config.validate();
    ensemble.validate();
    if (x.size() != ensemble.spec->input_dim) throw Error("attack: input dimension mismatch");
    if (config.clip_lo.size() != 0 && config.clip_lo.size() != x.size())
        throw Error("attack: clip range dimension mismatch");
}

Eigen::VectorXd clip_range(const Eigen::VectorXd& x, const AttackConfig& config) {
    if (config.clip_lo.size() == 0) return x;
    return x.cwiseMax(config.clip_lo).cwiseMin(config.clip_hi);
}

double perturbation_norm(const Eigen::VectorXd& d, AttackNorm norm) {
    return norm == AttackNorm::linf ? d.lpNorm<Eigen::Infinity>() : d.norm();
}

Eigen::VectorXd project_ball(const Eigen::VectorXd& x, const Eigen::VectorXd& origin, double eps, AttackNorm norm) {
    if (norm == AttackNorm::linf) return x.array().max(origin.array() - eps).min(origin.array() + eps).matrix();
    const Eigen::VectorXd d = x - origin;
    const double n = d.norm();
    return n > eps ? Eigen::VectorXd(origin + d * (eps / n)) : x;
}

/// sign(g) for linf, g / ||g||_2 for l2; zero vector when g is zero.
Eigen::VectorXd steepest_direction(const Eigen::VectorXd& g, AttackNorm norm) {
    if (norm == AttackNorm::linf) return g.array().sign().matrix();
    const double n = g.norm();
    return n > 0.0 ? Eigen::VectorXd(g / n) : Eigen::VectorXd::Zero(g.size());
}

const DropoutMask* mask_of(const EnsembleMember& m) { return m.mask ? &*m.mask : nullptr; }

class Recorder {
public:
    Recorder(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x0, AttackNorm norm, const DensityFn& density)
        : ensemble_(ensemble), x0_(x0), norm_(norm), density_(density) {
        if (density_) traj_.gt_log_density.emplace();
    }

    void record(const Eigen::VectorXd& x) {
        const PredictiveDistribution pd = predictive(ensemble_, x);
        traj_.inputs.push_back(x);
        traj_.mean_probs.push_back(pd.mean_probs);
        traj_.perturbation_norm.push_back(perturbation_norm(x - x0_, norm_));
        traj_.mutual_information.push_back(mutual_information(pd, ensemble_.weights).mutual_information);
        if (density_) traj_.gt_log_density->push_back(density_(x));
    }

    AttackTrajectory finish(std::optional<int> target) {
        traj_.original_label = argmax(traj_.mean_probs.front());
        traj_.final_label = argmax(traj_.mean_probs.back());
        traj_.target = target;
        traj_.success = target ? traj_.final_label == *target : traj_.final_label != traj_.original_label;
        return std::move(traj_);
    }

private:
    const PosteriorEnsemble& ensemble_;
    Eigen::VectorXd x0_;
    AttackNorm norm_;
    const DensityFn& density_;
    AttackTrajectory traj_;
};

}  // namespace

Eigen::VectorXd attack_gradient(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                                const AttackConfig& config, Rng& rng) {
    switch (config.gradient_source) {
        case GradientSource::fixed_member: {
            if (config.fixed_member < 0 || config.fixed_member >= ensemble.size())
                throw Error("attack: fixed_member index out of range");
            const auto& m = ensemble.members[static_cast<std::size_t>(config.fixed_member)];
            return input_gradient(m.params, x, label, mask_of(m)).gradient;
        }
        case GradientSource::fresh_posterior_sample: {
            std::discrete_distribution<std::size_t> pick(ensemble.weights.data(),
                                                         ensemble.weights.data() + ensemble.weights.size());
            const auto& m = ensemble.members[pick(rng)];
            return input_gradient(m.params, x, label, mask_of(m)).gradient;
        }
        case GradientSource::ensemble_mean: {
            // d/dx [-log sum_m w_m p_m,y] = sum_m (w_m p_m,y / pbar_y) d/dx[-log p_m,y]
            std::vector<InputGradient> grads;
            grads.reserve(ensemble.members.size());
            double pbar = 0.0;
            for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
                grads.push_back(input_gradient(ensemble.members[m].params, x, label, mask_of(ensemble.members[m])));
                pbar += ensemble.weights[static_cast<Index>(m)] * grads.back().probs[label];
            }
            if (grads.size() == 1) return grads.front().gradient;
            Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
            for (std::size_t m = 0; m < grads.size(); ++m) {
                const double w = ensemble.weights[static_cast<Index>(m)];
                const double coef = pbar > 0.0 ? w * grads[m].probs[label] / pbar : w;
                g += coef * grads[m].gradient;
            }
            return g;
        }
    }
    throw Error("attack: unknown gradient source");
}

AttackTrajectory fgm(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                     const AttackConfig& config, std::optional<int> target, const DensityFn& density) {
    check_input(ensemble, x, config);
    if (target && (*target < 0 || *target >= ensemble.spec->num_classes)) throw Error("fgm: target out of range");
    Rng rng(derive_seed(config.seed, "fgm"));
    const Eigen::VectorXd g = attack_gradient(ensemble, x, target ? *target : label, config, rng);
    // Untargeted ascends the loss of `label`; targeted descends the loss of `target`.
    const Eigen::VectorXd dir = (target ? -1.0 : 1.0) * steepest_direction(g, config.norm);

    Recorder rec(ensemble, x, config.norm, density);
    rec.record(x);
    for (int k = 1; k <= config.iterations; ++k) {
        const double eps = config.epsilon * static_cast<double>(k) / config.iterations;
        rec.record(project_ball(clip_range(x + eps * dir, config), x, config.epsilon, config.norm));
    }
    return rec.finish(target);
}

AttackTrajectory mim(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                     const AttackConfig& config, const DensityFn& density) {
    check_input(ensemble, x, config);
    const double alpha = config.alpha();
    if (!(alpha > 0.0) && config.epsilon > 0.0) throw Error("mim: step size must be positive");
    Rng rng(derive_seed(config.seed, "mim"));
    Recorder rec(ensemble, x, config.norm, density);
    rec.record(x);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd xt = x;
    for (int it = 0; it < config.iterations; ++it) {
        const Eigen::VectorXd grad = attack_gradient(ensemble, xt, label, config, rng);
        const double l1 = grad.lpNorm<1>();
        g = config.momentum * g;
        if (l1 > 0.0) g += grad / l1;
        xt = project_ball(clip_range(xt + alpha * steepest_direction(g, config.norm), config), x, config.epsilon,
                          config.norm);
        rec.record(xt);
    }
    return rec.finish(std::nullopt);
}

Eigen::VectorXd noise_control(const Eigen::VectorXd& x, const AttackConfig& config, Rng& rng) {
    config.validate();
    std::uniform_real_distribution<double> u(-config.epsilon, config.epsilon);
    Eigen::VectorXd out = x;
    if (config.epsilon == 0.0) return clip_range(out, config);
    for (Index i = 0; i < out.size(); ++i) out[i] += u(rng);
    return project_ball(clip_range(out, config), x, config.epsilon, AttackNorm::linf);
}

Eigen::VectorXd nearest_latent_distance(const RowMatrix& grid_latents, const RowMatrix& train_latents) {
    if (train_latents.rows() == 0) throw Error("nearest_latent_distance: no training latents");
    Eigen::VectorXd d(grid_latents.rows());
    for (Index i = 0; i < grid_latents.rows(); ++i)
        d[i] = std::sqrt((train_latents.rowwise() - grid_latents.row(i)).rowwise().squaredNorm().minCoeff());
    return d;
}

std::vector<GarbageCandidate> latent_hole_attack(const PosteriorEnsemble& ensemble, const GridDataset& grid,
                                                 const RowMatrix& train_latents, double mi_threshold,
                                                 std::size_t top_k) {
    if (grid.size() == 0) throw Error("latent_hole_attack: empty grid");
    if (!(mi_threshold >= 0.0)) throw Error("latent_hole_attack: mi_threshold must be >= 0");
    const auto preds = predictive_batch(ensemble, grid.inputs);
    const Eigen::VectorXd dist = nearest_latent_distance(grid.latents, train_latents);

    std::vector<GarbageCandidate> kept;
    for (Index i = 0; i < grid.size(); ++i) {
        const auto& pd = preds[static_cast<std::size_t>(i)];
        const double mi = mutual_information(pd, ensemble.weights).mutual_information;
        if (!(mi <= mi_threshold)) continue;
        GarbageCandidate c;
        c.grid_index = i;
        c.latent = grid.latents.row(i).transpose();
        c.input = grid.inputs.row(i).transpose();
        c.predicted = argmax(pd.mean_probs);
        c.confidence = pd.mean_probs[c.predicted];
        c.mutual_information = mi;
        c.distance = dist[i];
        kept.push_back(std::move(c));
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const GarbageCandidate& a, const GarbageCandidate& b) { return a.distance > b.distance; });
    if (kept.size() > top_k) kept.resize(top_k);
    return kept;
}

AttackTrajectory sphere_projected_attack(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x, int label,
                                         const AttackConfig& config) {
    check_input(ensemble, x, config);
    const double r = x.norm();
    if (!(r > 0.0)) throw Error("sphere attack: input must be off the origin");
    if (config.norm != AttackNorm::l2) throw Error("sphere attack: requires the l2 norm");
    if (config.epsilon < 2.0 * r) throw Error("sphere attack: epsilon must cover the sphere diameter");
    Rng rng(derive_seed(config.seed, "sphere"));
    const double alpha = config.alpha();

    Recorder rec(ensemble, x, config.norm, {});
    rec.record(x);
    Eigen::VectorXd xt = x;
    for (int it = 0; it < config.iterations; ++it) {
        const Eigen::VectorXd g = attack_gradient(ensemble, xt, label, config, rng);
        const Eigen::VectorXd moved = xt + alpha * steepest_direction(g, AttackNorm::l2);
        const double n = moved.norm();
        if (n > 0.0) xt = moved * (r / n);
        rec.record(xt);
    }
    return rec.finish(std::nullopt);
}

namespace {

void append_rows(io::CsvWriter& csv, const AttackTrajectory& t, std::optional<long long> id) {
    for (std::size_t s = 0; s < t.steps(); ++s) {
        if (id) csv.cell(*id);
        const int cls = argmax(t.mean_probs[s]);
        csv.cell(static_cast<long long>(s))
            .cell((t.inputs[s] - t.inputs.front()).lpNorm<Eigen::Infinity>())
            .cell(static_cast<long long>(cls))
            .cell(t.mean_probs[s][cls])
            .cell(t.mutual_information[s]);
        if (t.gt_log_density) csv.cell((*t.gt_log_density)[s]);
        else csv.empty();
        csv.end_row();
    }
}

}  // namespace

std::string trajectory_csv(const AttackTrajectory& trajectory) {
    io::CsvWriter csv({"step", "linf_norm", "pred_class", "pred_prob", "mi", "gt_log_density"});
    append_rows(csv, trajectory, std::nullopt);
    return csv.str();
}

std::string trajectories_csv(const std::vector<AttackTrajectory>& trajectories) {
    io::CsvWriter csv({"trajectory", "step", "linf_norm", "pred_class", "pred_prob", "mi", "gt_log_density"});
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        append_rows(csv, trajectories[i], static_cast<long long>(i));
    return csv.str();
}

}  // namespace uqadv
