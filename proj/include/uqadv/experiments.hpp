#pragma once

// Experiment runners. A Lab owns one configuration and lazily builds (and caches)
// the data, models and attack studies shared between experiments.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uqadv/attacks.hpp"
#include "uqadv/audit.hpp"
#include "uqadv/config.hpp"
#include "uqadv/inference.hpp"
#include "uqadv/manifold.hpp"

namespace uqadv {

ManifoldConfig manifold_config(const RunConfig& config);
/// Plain classifier (model.*) or the dropout variant (dropout.*).
NetworkSpec classifier_spec(const RunConfig& config, Index input_dim, int num_classes, bool dropout);
TrainConfig train_config(const RunConfig& config, std::uint64_t seed, bool dropout);
HmcConfig hmc_config(const RunConfig& config, std::uint64_t seed);

struct ExperimentResult {
    std::string name;
    std::filesystem::path directory;
    std::vector<std::filesystem::path> files;
    std::map<std::string, double> metrics;

    double metric(const std::string& key) const;
};

/// MIM runs against one model, per epsilon and repetition.
struct MimStudy {
    std::vector<double> epsilons;
    /// runs[eps][rep]
    std::vector<std::vector<std::vector<AttackTrajectory>>> runs;
};

struct SphereModels {
    SpheresDataset train;
    SpheresDataset test;
    ParamVector plain;
    ParamVector radial;
};

class Lab {
public:
    explicit Lab(RunConfig config);

    const RunConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t seed(std::string_view tag) const { return derive_seed(seed_, tag); }
    std::uint64_t seed(std::string_view tag, std::uint64_t index) const { return derive_seed(seed_, tag, index); }

    const LatentMixture& mixture();
    const Decoder& decoder();
    const QuadratureGrid& quadrature();
    const ManifoldDataset& train_data();
    const ManifoldDataset& test_data();
    const GridDataset& grid();
    const Eigen::VectorXd& grid_log_density();

    const ParamVector& map_model();
    const HmcResult& hmc();
    const ParamVector& dropout_model();
    /// MC-dropout realisations of dropout_model().
    const PosteriorEnsemble& dropout_ensemble();
    /// ensemble.members independently trained dropout models.
    const PosteriorEnsemble& deep_ensemble();
    /// Delta balls of the HMC ensemble around the training points (audit.points of them).
    const std::vector<DeltaBallEstimate>& hmc_delta_balls();

    const SphereModels& sphere_models();

    /// Test-set rows attacked in repetition `rep`.
    std::vector<Index> attack_subset(int rep);
    /// Linf budget, clip range from the training inputs.
    AttackConfig attack_config(double epsilon, std::uint64_t seed);

    /// MIM with the ensemble-mean gradient: "dropout" or "ensemble".
    const MimStudy& mim_study(const std::string& method);

private:
    RunConfig config_;
    std::uint64_t seed_;
    std::optional<LatentMixture> mixture_;
    std::optional<Decoder> decoder_;
    std::optional<QuadratureGrid> quadrature_;
    std::optional<ManifoldDataset> train_;
    std::optional<ManifoldDataset> test_;
    std::optional<GridDataset> grid_;
    std::optional<Eigen::VectorXd> grid_density_;
    std::optional<ParamVector> map_;
    std::optional<HmcResult> hmc_;
    std::optional<ParamVector> dropout_;
    std::optional<PosteriorEnsemble> dropout_ensemble_;
    std::optional<PosteriorEnsemble> deep_ensemble_;
    std::optional<std::vector<DeltaBallEstimate>> delta_balls_;
    std::optional<SphereModels> spheres_;
    std::map<std::string, MimStudy> mim_;
};

const std::vector<std::string>& experiment_names();

/// Writes CSVs and summary.txt under out_dir/name. Unknown names throw, listing the valid ones.
ExperimentResult run_experiment(const std::string& name, Lab& lab, const std::filesystem::path& out_dir);

}  // namespace uqadv
