#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uqadv/netmodel.hpp"

namespace uqadv {

/// Inputs (N x D) with integral class labels.
struct LabelledData {
    RowMatrix inputs;
    std::vector<int> labels;

    Index size() const { return inputs.rows(); }
    LabelledData subset(const std::vector<Index>& rows) const;
};

enum class MemberKind : std::uint8_t { hmc = 0, dropout_mask = 1, independent = 2 };

std::string_view member_kind_name(MemberKind kind);

/// One deterministic function in the ensemble: parameters plus an optional fixed dropout mask.
struct EnsembleMember {
    ParamVector params;
    std::optional<DropoutMask> mask;
};

struct PosteriorEnsemble {
    std::shared_ptr<const NetworkSpec> spec;
    MemberKind kind = MemberKind::independent;
    std::vector<EnsembleMember> members;
    Eigen::VectorXd weights;  // sums to 1

    Index size() const { return static_cast<Index>(members.size()); }
    /// Throws unless there is at least one member and every member matches `spec`.
    void validate() const;
};

PosteriorEnsemble make_ensemble(std::shared_ptr<const NetworkSpec> spec, MemberKind kind,
                                std::vector<EnsembleMember> members);

/// Single-member ensemble around a deterministic model.
PosteriorEnsemble deterministic_ensemble(const ParamVector& params);

struct PredictiveDistribution {
    RowMatrix member_probs;  // M x K
    Eigen::VectorXd mean_probs;
};

PredictiveDistribution predictive(const PosteriorEnsemble& ensemble, const Eigen::VectorXd& x);
/// Same as calling predictive() row by row, evaluated member-major over the whole batch.
std::vector<PredictiveDistribution> predictive_batch(const PosteriorEnsemble& ensemble, const RowMatrix& inputs);

// ---------------------------------------------------------------------------
// MAP / SGD training

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 30;
    int batch_size = 64;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Minibatch SGD on mean cross-entropy + (weight_decay / 2)||w||^2. Training with
/// dropout_rate > 0 samples an independent mask per example per step.
ParamVector train_map(const NetworkSpec& spec, const LabelledData& data, const TrainConfig& config,
                      const std::optional<ParamVector>& init = std::nullopt);

double accuracy(const ParamVector& params, const LabelledData& data);

// ---------------------------------------------------------------------------
// Hamiltonian Monte Carlo

struct HmcConfig {
    double step_size = 0.01;
    int leapfrog_steps = 20;
    int num_samples = 300;
    int burn_in = 500;
    int thinning = 3;
    double prior_precision = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
/// Returns U(q) and writes grad U(q) into `grad`.
using PotentialFn = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd& grad)>;

struct LeapfrogState {
    Eigen::VectorXd position;
    Eigen::VectorXd momentum;
    bool divergent = false;
};

/// Leapfrog integration of H = U(q) + |p|^2 / 2. A non-finite gradient marks the
/// result divergent and stops integration.
LeapfrogState leapfrog(const Eigen::VectorXd& position, const Eigen::VectorXd& momentum, double step_size,
                       int steps, const GradientFn& grad_u);

struct ChainResult {
    std::vector<Eigen::VectorXd> samples;
    double acceptance_rate = 0.0;   // over post-burn-in proposals
    int divergent = 0;
    std::vector<std::string> warnings;
};

/// Metropolis-corrected HMC with identity mass matrix and fresh N(0, I) momentum each iteration.
ChainResult hmc_chain(const PotentialFn& potential, const Eigen::VectorXd& start, const HmcConfig& config);

struct HmcResult {
    PosteriorEnsemble ensemble;
    double acceptance_rate = 0.0;
    std::vector<std::string> warnings;
};

/// Samples p(w | data) with U(w) = sum_n CE_n(w) + (prior_precision / 2)||w||^2, full-batch.
HmcResult hmc_sample(const NetworkSpec& spec, const LabelledData& data, const HmcConfig& config,
                     const std::optional<ParamVector>& start = std::nullopt);

// ---------------------------------------------------------------------------
// Dropout and ensembles

PosteriorEnsemble mc_dropout_ensemble(const ParamVector& params, int num_passes, std::uint64_t seed);

/// Members trained from seeds base_seed..base_seed+num_members-1. With dropout_rate > 0
/// each member contributes `passes_per_member` fixed-mask realisations.
PosteriorEnsemble deep_ensemble(const NetworkSpec& spec, const LabelledData& data, const TrainConfig& config,
                                int num_members, std::uint64_t base_seed, int passes_per_member);

}  // namespace uqadv
