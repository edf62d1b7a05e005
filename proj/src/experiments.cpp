#include "uqadv/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uqadv/checkpoint.hpp"
#include "uqadv/io.hpp"
#include "uqadv/stats.hpp"
#include "uqadv/uncertainty.hpp"

namespace uqadv {

namespace fs = std::filesystem;

ManifoldConfig manifold_config(const RunConfig& c) {
    ManifoldConfig m;
    m.input_dim = c.get_int("data.dim");
    m.num_classes = static_cast<int>(c.get_int("data.classes"));
    m.components_per_class = static_cast<int>(c.get_int("data.components"));
    m.sigma_z = c.get_real("data.sigma_z");
    m.sigma_x = c.get_real("data.sigma_x");
    m.class_radius = c.get_real("data.class_radius");
    m.component_spread = c.get_real("data.component_spread");
    m.decoder_hidden = c.get_int("data.decoder_hidden");
    m.decoder_frequency = c.get_real("data.decoder_frequency");
    m.decoder_scale = c.get_real("data.decoder_scale");
    // One seed fixes the whole generative model; the master seed only drives sampling.
    m.decoder_seed = c.get_seed("data.decoder_seed");
    m.mixture_seed = m.decoder_seed;
    m.validate();
    return m;
}

NetworkSpec classifier_spec(const RunConfig& c, Index input_dim, int num_classes, bool dropout) {
    NetworkSpec s;
    s.input_dim = input_dim;
    for (long long h : c.get_int_list(dropout ? "dropout.hidden" : "model.hidden")) s.hidden_sizes.push_back(h);
    const std::string& act = c.get_text("model.activation");
    if (act == "relu") s.activation = Activation::relu;
    else if (act == "sine") s.activation = Activation::sine;
    else throw ConfigError("model.activation must be relu or sine, got \"" + act + "\"");
    s.num_classes = num_classes;
    s.dropout_rate = dropout ? c.get_real("dropout.rate") : 0.0;
    s.validate();
    return s;
}

TrainConfig train_config(const RunConfig& c, std::uint64_t seed, bool dropout) {
    TrainConfig t;
    t.learning_rate = c.get_real(dropout ? "dropout.lr" : "train.lr");
    t.epochs = static_cast<int>(c.get_int("train.epochs"));
    t.batch_size = static_cast<int>(c.get_int("train.batch"));
    t.weight_decay = c.get_real("train.weight_decay");
    t.momentum = c.get_real("train.momentum");
    t.seed = seed;
    t.validate();
    return t;
}

HmcConfig hmc_config(const RunConfig& c, std::uint64_t seed) {
    HmcConfig h;
    h.step_size = c.get_real("hmc.step_size");
    h.leapfrog_steps = static_cast<int>(c.get_int("hmc.leapfrog"));
    h.num_samples = static_cast<int>(c.get_int("hmc.samples"));
    h.burn_in = static_cast<int>(c.get_int("hmc.burn_in"));
    h.thinning = static_cast<int>(c.get_int("hmc.thinning"));
    h.prior_precision = c.get_real("hmc.prior_precision");
    h.seed = seed;
    h.validate();
    return h;
}

double ExperimentResult::metric(const std::string& key) const {
    auto it = metrics.find(key);
    if (it == metrics.end()) throw Error("experiment " + name + " has no metric \"" + key + "\"");
    return it->second;
}

// ---------------------------------------------------------------------------
// Lab

namespace {

fs::path require_artifact(const std::string& path) {
    if (!fs::exists(path)) throw Error("missing artifact: " + path);
    return path;
}

int argmax(const Eigen::VectorXd& v) {
    Index i = 0;
    v.maxCoeff(&i);
    return static_cast<int>(i);
}

void check_model(const NetworkSpec& spec, Index dim, Index classes, const std::string& what) {
    if (spec.input_dim != dim || spec.num_classes != classes)
        throw Error(what + ": checkpoint does not match the data dimensions");
}

}  // namespace

Lab::Lab(RunConfig config) : config_(std::move(config)), seed_(config_.get_seed("seed")) {}

const LatentMixture& Lab::mixture() {
    if (!mixture_) mixture_ = make_mixture(manifold_config(config_));
    return *mixture_;
}

const Decoder& Lab::decoder() {
    if (!decoder_) decoder_.emplace(manifold_config(config_));
    return *decoder_;
}

const QuadratureGrid& Lab::quadrature() {
    if (!quadrature_)
        quadrature_.emplace(mixture(), decoder(), mixture_bounds(mixture(), config_.get_real("density.quad_margin")),
                            config_.get_int("density.quad_resolution"));
    return *quadrature_;
}

const ManifoldDataset& Lab::train_data() {
    if (!train_) {
        const std::string& path = config_.get_text("data.path");
        if (!path.empty()) {
            train_ = load_dataset(require_artifact(path));
            if (train_->inputs.cols() != config_.get_int("data.dim") ||
                train_->num_classes != config_.get_int("data.classes"))
                throw Error(path + ": dataset does not match data.dim / data.classes");
        } else {
            train_ = sample_dataset(mixture(), decoder(), quadrature(), config_.get_int("data.n"), seed("train-data"));
        }
    }
    return *train_;
}

const ManifoldDataset& Lab::test_data() {
    if (!test_)
        test_ = sample_dataset(mixture(), decoder(), quadrature(), config_.get_int("data.test_n"), seed("test-data"));
    return *test_;
}

const GridDataset& Lab::grid() {
    if (!grid_)
        grid_ = make_grid(decoder(), envelope_bounds(mixture(), config_.get_real("grid.envelope")),
                          config_.get_int("grid.resolution"));
    return *grid_;
}

const Eigen::VectorXd& Lab::grid_log_density() {
    if (!grid_density_) {
        const GridDataset& g = grid();
        Eigen::VectorXd d(g.size());
        for (Index i = 0; i < g.size(); ++i) d[i] = quadrature().log_density(g.inputs.row(i).transpose());
        grid_density_ = std::move(d);
    }
    return *grid_density_;
}

const ParamVector& Lab::map_model() {
    if (!map_) {
        const ManifoldDataset& data = train_data();
        const std::string& path = config_.get_text("models.map");
        if (!path.empty()) {
            map_ = load_params(require_artifact(path));
        } else {
            const NetworkSpec spec = classifier_spec(config_, data.inputs.cols(), data.num_classes, false);
            map_ = train_map(spec, data.labelled(), train_config(config_, seed("map"), false));
        }
        check_model(map_->network(), data.inputs.cols(), data.num_classes, "map model");
    }
    return *map_;
}

const HmcResult& Lab::hmc() {
    if (!hmc_) {
        const ManifoldDataset& data = train_data();
        const std::string& path = config_.get_text("models.hmc");
        if (!path.empty()) {
            HmcResult r;
            r.ensemble = load_ensemble(require_artifact(path));
            r.acceptance_rate = std::numeric_limits<double>::quiet_NaN();
            hmc_ = std::move(r);
        } else {
            const std::string& start = config_.get_text("hmc.start");
            if (start != "map" && start != "random")
                throw ConfigError("hmc.start must be map or random, got \"" + start + "\"");
            const NetworkSpec spec = classifier_spec(config_, data.inputs.cols(), data.num_classes, false);
            std::optional<ParamVector> init;
            if (start == "map") init = map_model();
            hmc_ = hmc_sample(spec, data.labelled(), hmc_config(config_, seed("hmc")), init);
        }
        check_model(*hmc_->ensemble.spec, data.inputs.cols(), data.num_classes, "hmc ensemble");
    }
    return *hmc_;
}

const ParamVector& Lab::dropout_model() {
    if (!dropout_) {
        const ManifoldDataset& data = train_data();
        const std::string& path = config_.get_text("models.dropout");
        if (!path.empty()) {
            dropout_ = load_params(require_artifact(path));
        } else {
            const NetworkSpec spec = classifier_spec(config_, data.inputs.cols(), data.num_classes, true);
            dropout_ = train_map(spec, data.labelled(), train_config(config_, seed("dropout-model"), true));
        }
        check_model(dropout_->network(), data.inputs.cols(), data.num_classes, "dropout model");
        if (!(dropout_->network().dropout_rate > 0.0)) throw Error("dropout model has dropout rate 0");
    }
    return *dropout_;
}

const PosteriorEnsemble& Lab::dropout_ensemble() {
    if (!dropout_ensemble_)
        dropout_ensemble_ = mc_dropout_ensemble(dropout_model(), static_cast<int>(config_.get_int("dropout.passes")),
                                                seed("dropout-passes"));
    return *dropout_ensemble_;
}

const PosteriorEnsemble& Lab::deep_ensemble() {
    if (!deep_ensemble_) {
        const ManifoldDataset& data = train_data();
        const std::string& path = config_.get_text("models.ensemble");
        if (!path.empty()) {
            deep_ensemble_ = load_ensemble(require_artifact(path));
        } else {
            const NetworkSpec spec = classifier_spec(config_, data.inputs.cols(), data.num_classes, true);
            deep_ensemble_ = uqadv::deep_ensemble(spec, data.labelled(), train_config(config_, 0, true),
                                                  static_cast<int>(config_.get_int("ensemble.members")),
                                                  seed("ensemble"), static_cast<int>(config_.get_int("ensemble.passes")));
        }
        check_model(*deep_ensemble_->spec, data.inputs.cols(), data.num_classes, "deep ensemble");
    }
    return *deep_ensemble_;
}

const std::vector<DeltaBallEstimate>& Lab::hmc_delta_balls() {
    if (!delta_balls_) {
        const ManifoldDataset& data = train_data();
        const Index points = config_.get_int("audit.points");
        RowMatrix centres = data.inputs;
        if (points > 0 && points < data.size()) centres = data.inputs.topRows(points);
        delta_balls_ = estimate_delta_balls(hmc().ensemble, centres, config_.get_real("audit.epsilon"),
                                            static_cast<int>(config_.get_int("audit.probes")),
                                            config_.get_real_list("audit.radii"), seed("delta-balls"));
    }
    return *delta_balls_;
}

const SphereModels& Lab::sphere_models() {
    if (!spheres_) {
        const Index dim = config_.get_int("spheres.dim");
        const double r_in = config_.get_real("spheres.r_inner");
        const double r_out = config_.get_real("spheres.r_outer");
        const Index trials = config_.get_int("spheres.trials");
        SphereModels s{make_spheres(dim, r_in, r_out, config_.get_int("spheres.n"), seed("spheres-train")),
                       make_spheres(dim, r_in, r_out, (trials + 1) / 2, seed("spheres-test")),
                       {},
                       {}};
        s.test.points.conservativeResize(trials, Eigen::NoChange);
        s.test.labels.resize(static_cast<std::size_t>(trials));
        NetworkSpec spec;
        spec.input_dim = dim;
        for (long long h : config_.get_int_list("spheres.hidden")) spec.hidden_sizes.push_back(h);
        spec.num_classes = 2;
        s.plain = train_map(spec, s.train.labelled(), train_config(config_, seed("spheres-plain"), false));
        spec.feature_mode = FeatureMode::radial;
        s.radial = train_map(spec, s.train.labelled(), train_config(config_, seed("spheres-radial"), false));
        spheres_ = std::move(s);
    }
    return *spheres_;
}

std::vector<Index> Lab::attack_subset(int rep) {
    const Index n = test_data().size();
    const Index k = std::min<Index>(config_.get_int("attack.examples"), n);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed("attack-subset", static_cast<std::uint64_t>(rep)));
    // Partial Fisher-Yates.
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

AttackConfig Lab::attack_config(double epsilon, std::uint64_t attack_seed) {
    AttackConfig a;
    a.epsilon = epsilon;
    a.iterations = static_cast<int>(config_.get_int("attack.iterations"));
    a.momentum = config_.get_real("attack.momentum");
    a.seed = attack_seed;
    set_clip_from_data(a, train_data().inputs);
    a.validate();
    return a;
}

const MimStudy& Lab::mim_study(const std::string& method) {
    auto it = mim_.find(method);
    if (it != mim_.end()) return it->second;
    const PosteriorEnsemble* ens = nullptr;
    if (method == "dropout") ens = &dropout_ensemble();
    else if (method == "ensemble") ens = &deep_ensemble();
    else throw Error("unknown MIM study \"" + method + "\"");

    MimStudy study;
    study.epsilons = config_.get_real_list("attack.eps");
    const int reps = static_cast<int>(config_.get_int("attack.repetitions"));
    const ManifoldDataset& test = test_data();
    for (std::size_t e = 0; e < study.epsilons.size(); ++e) {
        std::vector<std::vector<AttackTrajectory>> per_rep;
        for (int rep = 0; rep < reps; ++rep) {
            AttackConfig cfg = attack_config(study.epsilons[e], seed("mim", static_cast<std::uint64_t>(rep)));
            cfg.gradient_source = GradientSource::ensemble_mean;
            std::vector<AttackTrajectory> runs;
            for (Index i : attack_subset(rep))
                runs.push_back(mim(*ens, test.inputs.row(i).transpose(), test.labels[static_cast<std::size_t>(i)], cfg));
            per_rep.push_back(std::move(runs));
        }
        study.runs.push_back(std::move(per_rep));
    }
    return mim_.emplace(method, std::move(study)).first->second;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

struct Report {
    ExperimentResult result;
    io::Summary summary;

    Report(const std::string& name, Lab& lab, const fs::path& out_dir) {
        result.name = name;
        result.directory = out_dir / name;
        summary.comment("experiment: " + name)
            .comment("master seed: " + std::to_string(lab.seed()) +
                     " (sub-seeds: splitmix64(seed ^ fnv1a(tag)), indexed streams add the index and mix again)")
            .comment("config hash: " + lab.config().hash())
            .comment(std::string("entropy unit: ") + kEntropyUnit)
            .comment("caveat: synthetic data from a 2-D latent mixture and a fixed random sine decoder; "
                     "results are directional, not comparable with image benchmarks")
            .comment("caveat: perturbation budgets are desk-scale analogs sized to the synthetic input range")
            .comment("caveat: distance to the training data is latent L2 distance");
    }

    void text(const std::string& file, const std::string& body) {
        const fs::path p = result.directory / file;
        io::write_text(p, body);
        result.files.push_back(p);
    }

    void csv(const std::string& file, const io::CsvWriter& w) { text(file, w.str()); }

    void metric(const std::string& key, double v) {
        result.metrics[key] = v;
        summary.set(key, v);
    }

    ExperimentResult finish() {
        const fs::path p = result.directory / "summary.txt";
        summary.save(p);
        result.files.push_back(p);
        return std::move(result);
    }
};

double mean_entropy(const std::vector<PredictiveDistribution>& pds) {
    double s = 0.0;
    for (const auto& pd : pds) s += entropy(pd.mean_probs);
    return pds.empty() ? 0.0 : s / static_cast<double>(pds.size());
}

std::vector<double> mi_scores(const PosteriorEnsemble& ens, const RowMatrix& inputs) {
    std::vector<double> out;
    for (const auto& pd : predictive_batch(ens, inputs)) out.push_back(mutual_information(pd, ens.weights).mutual_information);
    return out;
}

ExperimentResult fig2_density_vs_step(Lab& lab, const fs::path& out_dir) {
    Report rep("fig2_density_vs_step", lab, out_dir);
    const auto& cfg = lab.config();
    const PosteriorEnsemble ens = deterministic_ensemble(lab.map_model());
    const ManifoldDataset& test = lab.test_data();
    const QuadratureGrid& quad = lab.quadrature();
    const DensityFn density = [&quad](const Eigen::VectorXd& x) { return quad.log_density(x); };
    const std::vector<double> eps = cfg.get_real_list("attack.eps");
    AttackConfig ac = lab.attack_config(eps.back(), lab.seed("fgm"));
    ac.iterations = static_cast<int>(cfg.get_int("attack.fgm_steps"));
    ac.gradient_source = GradientSource::fixed_member;

    std::vector<AttackTrajectory> targeted, untargeted;
    for (Index i : lab.attack_subset(0)) {
        const Eigen::VectorXd x = test.inputs.row(i).transpose();
        const int y = test.labels[static_cast<std::size_t>(i)];
        const int clean = argmax(predictive(ens, x).mean_probs);
        targeted.push_back(fgm(ens, x, y, ac, (clean + 1) % static_cast<int>(ens.spec->num_classes), density));
        untargeted.push_back(fgm(ens, x, y, ac, std::nullopt, density));
    }
    const DensityTrajectorySummary st = density_trajectory_report(targeted);
    const DensityTrajectorySummary su = density_trajectory_report(untargeted);

    io::CsvWriter steps({"step", "targeted_mean", "targeted_median", "untargeted_mean", "untargeted_median"});
    for (std::size_t s = 0; s < st.step_mean.size(); ++s)
        steps.cell(static_cast<long long>(s)).cell(st.step_mean[s]).cell(st.step_median[s]).cell(su.step_mean[s])
            .cell(su.step_median[s]).end_row();
    io::CsvWriter rho({"variant", "trajectory", "rho"});
    io::CsvWriter bins({"variant", "log_density_lo", "log_density_hi", "count", "accuracy"});
    for (const auto& [name, s] : {std::pair{"targeted", &st}, std::pair{"untargeted", &su}}) {
        for (std::size_t t = 0; t < s->trajectory_rho.size(); ++t) {
            rho.cell(name).cell(static_cast<long long>(t));
            if (s->trajectory_rho[t]) rho.cell(*s->trajectory_rho[t]);
            else rho.empty();
            rho.end_row();
        }
        for (const auto& b : s->accuracy_by_density)
            bins.cell(name).cell(b.lo).cell(b.hi).cell(static_cast<long long>(b.count)).cell(b.accuracy).end_row();
    }
    rep.text("trajectories_targeted.csv", trajectories_csv(targeted));
    rep.text("trajectories_untargeted.csv", trajectories_csv(untargeted));
    rep.csv("density_by_step.csv", steps);
    rep.csv("trajectory_rho.csv", rho);
    rep.csv("accuracy_by_density.csv", bins);

    rep.summary.set("epsilon", eps.back());
    rep.metric("targeted_median_rho", st.median_rho);
    rep.metric("targeted_fraction_final_below_initial", st.fraction_final_below_initial);
    rep.metric("targeted_excluded", static_cast<double>(st.excluded));
    rep.metric("targeted_success", success_rate(targeted));
    rep.metric("untargeted_median_rho", su.median_rho);
    rep.metric("untargeted_fraction_final_below_initial", su.fraction_final_below_initial);
    rep.metric("untargeted_success", success_rate(untargeted));
    rep.metric("step0_mean_log_density", st.step_mean.front());
    rep.metric("final_mean_log_density_targeted", st.step_mean.back());
    return rep.finish();
}

ExperimentResult fig5_mi_vs_density(Lab& lab, const fs::path& out_dir) {
    Report rep("fig5_mi_vs_density", lab, out_dir);
    const GridDataset& g = lab.grid();
    const Eigen::VectorXd& dens = lab.grid_log_density();
    const std::vector<double> hmc = mi_scores(lab.hmc().ensemble, g.inputs);
    const std::vector<double> drop = mi_scores(lab.dropout_ensemble(), g.inputs);
    const std::vector<double> ens = mi_scores(lab.deep_ensemble(), g.inputs);
    const std::vector<double> d(dens.data(), dens.data() + dens.size());

    io::CsvWriter w({"grid_index", "z1", "z2", "gt_log_density", "mi_hmc", "mi_dropout", "mi_ensemble"});
    for (Index i = 0; i < g.size(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        w.cell(static_cast<long long>(i)).cell(g.latents(i, 0)).cell(g.latents(i, 1)).cell(d[u]).cell(hmc[u])
            .cell(drop[u]).cell(ens[u]).end_row();
    }
    rep.csv("grid_uncertainty.csv", w);
    rep.metric("spearman_hmc", spearman(hmc, d));
    rep.metric("spearman_dropout", spearman(drop, d));
    rep.metric("spearman_ensemble", spearman(ens, d));
    rep.metric("spearman_dropout_vs_hmc", spearman(drop, hmc));
    rep.metric("hmc_acceptance_rate", lab.hmc().acceptance_rate);
    return rep.finish();
}

ExperimentResult table1_hmc_vs_det(Lab& lab, const fs::path& out_dir) {
    Report rep("table1_hmc_vs_det", lab, out_dir);
    const auto& cfg = lab.config();
    const PosteriorEnsemble det = deterministic_ensemble(lab.map_model());
    const PosteriorEnsemble& hmc = lab.hmc().ensemble;
    const ManifoldDataset& test = lab.test_data();
    const std::vector<double> eps = cfg.get_real_list("attack.eps");
    const int reps = static_cast<int>(cfg.get_int("attack.repetitions"));
    static const std::vector<std::string> cols = {"hmc_adv_success",   "hmc_noise_success", "hmc_adv_entropy",
                                                  "hmc_noise_entropy", "det_adv_success",   "det_noise_success",
                                                  "det_adv_entropy",   "det_noise_entropy"};

    std::vector<std::string> rep_header = {"epsilon", "repetition"};
    rep_header.insert(rep_header.end(), cols.begin(), cols.end());
    io::CsvWriter per_rep(rep_header);
    std::vector<std::string> header = {"epsilon"};
    for (const auto& c : cols) {
        header.push_back(c + "_mean");
        header.push_back(c + "_std");
    }
    io::CsvWriter table(header);

    for (std::size_t e = 0; e < eps.size(); ++e) {
        std::vector<std::vector<double>> values(cols.size());
        for (int r = 0; r < reps; ++r) {
            const auto subset = lab.attack_subset(r);
            std::vector<double> row;
            for (const PosteriorEnsemble* ens : {&hmc, &det}) {
                AttackConfig ac = lab.attack_config(eps[e], lab.seed("table1-attack", static_cast<std::uint64_t>(r)));
                ac.gradient_source = ens->size() > 1 ? GradientSource::fresh_posterior_sample
                                                     : GradientSource::fixed_member;
                Rng noise_rng(lab.seed("table1-noise", static_cast<std::uint64_t>(r)));
                std::vector<AttackTrajectory> adv;
                RowMatrix clean(static_cast<Index>(subset.size()), test.inputs.cols());
                RowMatrix advx(clean.rows(), clean.cols()), noisy(clean.rows(), clean.cols());
                for (std::size_t k = 0; k < subset.size(); ++k) {
                    const Eigen::VectorXd x = test.inputs.row(subset[k]).transpose();
                    adv.push_back(mim(*ens, x, test.labels[static_cast<std::size_t>(subset[k])], ac));
                    clean.row(static_cast<Index>(k)) = x.transpose();
                    advx.row(static_cast<Index>(k)) = adv.back().final_input().transpose();
                    noisy.row(static_cast<Index>(k)) = noise_control(x, ac, noise_rng).transpose();
                }
                const auto pc = predictive_batch(*ens, clean);
                const auto pa = predictive_batch(*ens, advx);
                const auto pn = predictive_batch(*ens, noisy);
                double noise_flips = 0.0;
                for (std::size_t k = 0; k < pc.size(); ++k)
                    noise_flips += argmax(pn[k].mean_probs) != argmax(pc[k].mean_probs) ? 1.0 : 0.0;
                row.push_back(success_rate(adv));
                row.push_back(noise_flips / static_cast<double>(pc.size()));
                row.push_back(mean_entropy(pa));
                row.push_back(mean_entropy(pn));
            }
            per_rep.cell(eps[e]).cell(static_cast<long long>(r));
            for (std::size_t c = 0; c < cols.size(); ++c) {
                values[c].push_back(row[c]);
                per_rep.cell(row[c]);
            }
            per_rep.end_row();
        }
        table.cell(eps[e]);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            table.cell(mean(values[c])).cell(stddev(values[c]));
            const std::string suffix = e + 1 == eps.size() ? "_large" : (e == 0 ? "_small" : "_" + std::to_string(e));
            rep.metric(cols[c] + suffix, mean(values[c]));
            rep.metric(cols[c] + suffix + "_std", stddev(values[c]));
        }
        table.end_row();
    }
    rep.csv("table1.csv", table);
    rep.csv("table1_repetitions.csv", per_rep);
    rep.metric("hmc_acceptance_rate", lab.hmc().acceptance_rate);
    return rep.finish();
}

ExperimentResult fig7_9_holes(Lab& lab, const fs::path& out_dir) {
    Report rep("fig7_9_holes", lab, out_dir);
    const double epsilon = lab.config().get_real("audit.epsilon");
    const double mi_hole = lab.config().get_real("holes.mi_threshold");
    const GridDataset& g = lab.grid();
    const std::vector<bool> inside = inside_delta_balls(g.inputs, lab.hmc_delta_balls());

    const IdealisedAudit hmc = idealised_audit(lab.hmc().ensemble, g, inside, epsilon, "hmc");
    const IdealisedAudit drop = idealised_audit(lab.dropout_ensemble(), g, inside, epsilon, "dropout");
    const IdealisedAudit ens = idealised_audit(lab.deep_ensemble(), g, inside, epsilon, "ensemble");

    io::CsvWriter w({"method", "grid_index", "region", "mi", "h_eps", "inside_dball"});
    for (const IdealisedAudit* a : {&hmc, &drop, &ens})
        for (const auto& p : a->points)
            w.cell(a->method).cell(static_cast<long long>(p.grid_index)).cell(p.inside ? "inside" : "outside")
                .cell(p.mutual_information).cell(a->h_eps).cell(static_cast<long long>(p.inside)).end_row();
    rep.csv("audit.csv", w);

    io::CsvWriter holes({"grid_index", "z1", "z2", "mi_dropout", "mi_hmc"});
    long long hole_count = 0;
    for (std::size_t i = 0; i < inside.size(); ++i) {
        if (inside[i]) continue;
        const double md = drop.points[i].mutual_information;
        const double mh = hmc.points[i].mutual_information;
        if (md < mi_hole && mh > hmc.h_eps) {
            ++hole_count;
            holes.cell(static_cast<long long>(i)).cell(g.latents(static_cast<Index>(i), 0))
                .cell(g.latents(static_cast<Index>(i), 1)).cell(md).cell(mh).end_row();
        }
    }
    rep.csv("dropout_holes.csv", holes);

    rep.metric("h_eps", hmc.h_eps);
    rep.metric("outside_count", static_cast<double>(hmc.outside_count));
    rep.metric("grid_points", static_cast<double>(g.size()));
    rep.metric("fraction_outside_above_hmc", hmc.fraction_outside_above);
    rep.metric("fraction_outside_above_dropout", drop.fraction_outside_above);
    rep.metric("fraction_outside_above_ensemble", ens.fraction_outside_above);
    rep.metric("dropout_holes", static_cast<double>(hole_count));
    return rep.finish();
}

ExperimentResult table3_latent_attack(Lab& lab, const fs::path& out_dir) {
    Report rep("table3_latent_attack", lab, out_dir);
    const auto& cfg = lab.config();
    const double mi_threshold = cfg.get_real("holes.mi_threshold");
    const double min_distance = cfg.get_real("holes.min_distance");
    const double bar = cfg.get_real("holes.confidence");
    const auto top_k = static_cast<std::size_t>(cfg.get_int("holes.top_k"));
    const GridDataset& g = lab.grid();
    const RowMatrix& latents = lab.train_data().latents;

    io::CsvWriter w({"method", "rank", "grid_index", "z1", "z2", "distance", "mi", "confidence", "predicted",
                     "garbage"});
    const std::vector<std::pair<std::string, const PosteriorEnsemble*>> methods = {
        {"dropout", &lab.dropout_ensemble()}, {"ensemble", &lab.deep_ensemble()}, {"hmc", &lab.hmc().ensemble}};
    for (const auto& [name, ens] : methods) {
        const auto all = latent_hole_attack(*ens, g, latents, mi_threshold, static_cast<std::size_t>(g.size()));
        long long garbage = 0, far = 0, topk_garbage = 0;
        for (std::size_t r = 0; r < all.size(); ++r) {
            const auto& c = all[r];
            const bool is_far = c.distance >= min_distance;
            const bool is_garbage = is_far && c.confidence > bar;
            far += is_far;
            garbage += is_garbage;
            if (r < top_k) {
                topk_garbage += is_garbage;
                w.cell(name).cell(static_cast<long long>(r)).cell(static_cast<long long>(c.grid_index))
                    .cell(c.latent[0]).cell(c.latent[1]).cell(c.distance).cell(c.mutual_information)
                    .cell(c.confidence).cell(static_cast<long long>(c.predicted))
                    .cell(static_cast<long long>(is_garbage)).end_row();
            }
        }
        const std::size_t returned = std::min(top_k, all.size());
        rep.metric("candidates_" + name, static_cast<double>(all.size()));
        rep.metric("far_candidates_" + name, static_cast<double>(far));
        rep.metric("garbage_" + name, static_cast<double>(garbage));
        rep.metric("topk_success_" + name,
                   returned ? static_cast<double>(topk_garbage) / static_cast<double>(returned) : 0.0);
    }
    rep.csv("candidates.csv", w);
    return rep.finish();
}

ExperimentResult table4_ensemble_defence(Lab& lab, const fs::path& out_dir) {
    Report rep("table4_ensemble_defence", lab, out_dir);
    io::CsvWriter per_rep({"epsilon", "method", "repetition", "success"});
    io::CsvWriter table({"epsilon", "method", "success_mean", "success_std"});
    for (const std::string method : {"dropout", "ensemble"}) {
        const MimStudy& s = lab.mim_study(method);
        for (std::size_t e = 0; e < s.epsilons.size(); ++e) {
            std::vector<double> rates;
            for (std::size_t r = 0; r < s.runs[e].size(); ++r) {
                rates.push_back(success_rate(s.runs[e][r]));
                per_rep.cell(s.epsilons[e]).cell(method).cell(static_cast<long long>(r)).cell(rates.back()).end_row();
            }
            table.cell(s.epsilons[e]).cell(method).cell(mean(rates)).cell(stddev(rates)).end_row();
            const std::string suffix = e + 1 == s.epsilons.size() ? "_large" : (e == 0 ? "_small" : "_" + std::to_string(e));
            rep.metric("success_" + method + suffix, mean(rates));
            rep.metric("success_" + method + suffix + "_std", stddev(rates));
        }
    }
    rep.csv("table4.csv", table);
    rep.csv("table4_repetitions.csv", per_rep);
    return rep.finish();
}

ExperimentResult table2_auc_analog(Lab& lab, const fs::path& out_dir) {
    Report rep("table2_auc_analog", lab, out_dir);
    io::CsvWriter det({"score", "label", "method", "epsilon", "repetition"});
    io::CsvWriter aucs({"epsilon", "method", "variant", "repetition", "auc"});
    io::CsvWriter table({"epsilon", "method", "auc_all_mean", "auc_all_std", "auc_s_mean", "auc_s_std"});
    const std::vector<std::pair<std::string, const PosteriorEnsemble*>> methods = {
        {"dropout", &lab.dropout_ensemble()}, {"ensemble", &lab.deep_ensemble()}};
    for (const auto& [method, ens] : methods) {
        const MimStudy& s = lab.mim_study(method);
        for (std::size_t e = 0; e < s.epsilons.size(); ++e) {
            std::vector<double> all_auc, s_auc;
            for (std::size_t r = 0; r < s.runs[e].size(); ++r) {
                const auto& runs = s.runs[e][r];
                std::vector<double> scores;
                std::vector<bool> adv;
                std::vector<bool> keep_s;
                for (const auto& t : runs) {
                    scores.push_back(t.mutual_information.front());
                    adv.push_back(false);
                    keep_s.push_back(true);
                }
                for (const auto& t : runs) {
                    scores.push_back(t.mutual_information.back());
                    adv.push_back(true);
                    keep_s.push_back(t.success);
                }
                for (std::size_t i = 0; i < scores.size(); ++i)
                    det.cell(scores[i]).cell(static_cast<long long>(adv[i])).cell(method).cell(s.epsilons[e])
                        .cell(static_cast<long long>(r)).end_row();
                all_auc.push_back(roc_auc(scores, adv).auc);
                aucs.cell(s.epsilons[e]).cell(method).cell("all").cell(static_cast<long long>(r)).cell(all_auc.back())
                    .end_row();
                std::vector<double> ss;
                std::vector<bool> sa;
                for (std::size_t i = 0; i < scores.size(); ++i)
                    if (keep_s[i]) {
                        ss.push_back(scores[i]);
                        sa.push_back(adv[i]);
                    }
                if (std::find(sa.begin(), sa.end(), true) != sa.end()) {
                    s_auc.push_back(roc_auc(ss, sa).auc);
                    aucs.cell(s.epsilons[e]).cell(method).cell("S").cell(static_cast<long long>(r)).cell(s_auc.back())
                        .end_row();
                }
            }
            const double nan = std::numeric_limits<double>::quiet_NaN();
            const double s_mean = s_auc.empty() ? nan : mean(s_auc);
            table.cell(s.epsilons[e]).cell(method).cell(mean(all_auc)).cell(stddev(all_auc));
            if (s_auc.empty()) table.empty().empty();
            else table.cell(s_mean).cell(stddev(s_auc));
            table.end_row();
            const std::string suffix = e + 1 == s.epsilons.size() ? "_large" : (e == 0 ? "_small" : "_" + std::to_string(e));
            rep.metric("auc_all_" + method + suffix, mean(all_auc));
            rep.metric("auc_s_" + method + suffix, s_mean);
        }
    }
    rep.csv("detection.csv", det);
    rep.csv("auc_repetitions.csv", aucs);
    rep.csv("table2.csv", table);
    return rep.finish();
}

/// Haar-random orthogonal matrix.
Eigen::MatrixXd random_rotation(Index n, Rng& rng) {
    Eigen::MatrixXd a(n, n);
    for (Index j = 0; j < n; ++j) a.col(j) = standard_normal(n, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    return q;
}

struct RotationTest {
    std::vector<double> radial_dev;
    std::vector<double> plain_dev;
    std::vector<bool> plain_flip;
};

RotationTest rotation_test(Lab& lab, const SphereModels& sm) {
    RotationTest out;
    const Index n = lab.config().get_int("spheres.rotations");
    Rng rng(lab.seed("rotations"));
    std::uniform_int_distribution<Index> pick(0, sm.test.points.rows() - 1);
    for (Index t = 0; t < n; ++t) {
        const Eigen::VectorXd x = sm.test.points.row(pick(rng)).transpose();
        const Eigen::MatrixXd rot = random_rotation(x.size(), rng);
        const Eigen::VectorXd rx = rot * x;
        out.radial_dev.push_back(
            (forward_logits(sm.radial, rx) - forward_logits(sm.radial, x)).lpNorm<Eigen::Infinity>());
        const Eigen::VectorXd a = forward_logits(sm.plain, x), b = forward_logits(sm.plain, rx);
        out.plain_dev.push_back((b - a).lpNorm<Eigen::Infinity>());
        out.plain_flip.push_back(argmax(a) != argmax(b));
    }
    return out;
}

ExperimentResult spheres_invariance(Lab& lab, const fs::path& out_dir) {
    Report rep("spheres_invariance", lab, out_dir);
    const auto& cfg = lab.config();
    const SphereModels& sm = lab.sphere_models();
    io::CsvWriter w({"model", "trial", "label", "clean_pred", "final_pred", "success", "max_radius_error"});
    const std::vector<std::pair<std::string, const ParamVector*>> models = {{"radial", &sm.radial},
                                                                            {"plain", &sm.plain}};
    for (const auto& [name, params] : models) {
        const PosteriorEnsemble ens = deterministic_ensemble(*params);
        AttackConfig ac;
        ac.norm = AttackNorm::l2;
        ac.epsilon = 2.0 * std::max(sm.test.r_inner, sm.test.r_outer) + 1e-9;
        ac.iterations = static_cast<int>(cfg.get_int("spheres.steps"));
        ac.step_size = cfg.get_real("spheres.step_size");
        ac.gradient_source = GradientSource::fixed_member;
        ac.seed = lab.seed("sphere-attack");
        std::vector<AttackTrajectory> runs;
        double max_err = 0.0;
        for (Index i = 0; i < sm.test.points.rows(); ++i) {
            const Eigen::VectorXd x = sm.test.points.row(i).transpose();
            const int label = sm.test.labels[static_cast<std::size_t>(i)];
            runs.push_back(sphere_projected_attack(ens, x, label, ac));
            double err = 0.0;
            for (const auto& xt : runs.back().inputs) err = std::max(err, std::abs(xt.norm() - x.norm()));
            max_err = std::max(max_err, err);
            w.cell(name).cell(static_cast<long long>(i)).cell(static_cast<long long>(label))
                .cell(static_cast<long long>(runs.back().original_label))
                .cell(static_cast<long long>(runs.back().final_label)).cell(static_cast<long long>(runs.back().success))
                .cell(err).end_row();
        }
        rep.metric("success_" + name, success_rate(runs));
        rep.metric("max_radius_error_" + name, max_err);
        rep.metric("accuracy_" + name, accuracy(*params, sm.test.labelled()));
    }
    rep.csv("sphere_attacks.csv", w);
    const RotationTest rt = rotation_test(lab, sm);
    rep.metric("trials", static_cast<double>(sm.test.points.rows()));
    rep.metric("max_logit_deviation_radial", *std::max_element(rt.radial_dev.begin(), rt.radial_dev.end()));
    rep.metric("max_logit_deviation_plain", *std::max_element(rt.plain_dev.begin(), rt.plain_dev.end()));
    return rep.finish();
}

ExperimentResult appendixA_invariance(Lab& lab, const fs::path& out_dir) {
    Report rep("appendixA_invariance", lab, out_dir);
    const SphereModels& sm = lab.sphere_models();
    const RotationTest rt = rotation_test(lab, sm);
    io::CsvWriter w({"trial", "radial_max_logit_deviation", "plain_max_logit_deviation", "plain_label_changed"});
    long long flips = 0;
    for (std::size_t t = 0; t < rt.radial_dev.size(); ++t) {
        flips += rt.plain_flip[t];
        w.cell(static_cast<long long>(t)).cell(rt.radial_dev[t]).cell(rt.plain_dev[t])
            .cell(static_cast<long long>(rt.plain_flip[t])).end_row();
    }
    rep.csv("rotations.csv", w);
    rep.metric("rotations", static_cast<double>(rt.radial_dev.size()));
    rep.metric("max_logit_deviation_radial", *std::max_element(rt.radial_dev.begin(), rt.radial_dev.end()));
    rep.metric("max_logit_deviation_plain", *std::max_element(rt.plain_dev.begin(), rt.plain_dev.end()));
    rep.metric("plain_label_change_rate", static_cast<double>(flips) / static_cast<double>(rt.plain_flip.size()));
    return rep.finish();
}

ExperimentResult lemma1_audit(Lab& lab, const fs::path& out_dir) {
    Report rep("lemma1_audit", lab, out_dir);
    const auto& balls = lab.hmc_delta_balls();
    const ManifoldDataset& data = lab.train_data();
    io::CsvWriter w({"train_index", "label", "predicted", "confident", "delta"});
    long long confident = 0, certified = 0;
    std::vector<double> deltas;
    for (std::size_t i = 0; i < balls.size(); ++i) {
        const bool conf = balls[i].probes > 0;
        confident += conf;
        if (conf) {
            certified += balls[i].delta > 0.0;
            deltas.push_back(balls[i].delta);
        }
        w.cell(static_cast<long long>(i)).cell(static_cast<long long>(data.labels[i]))
            .cell(static_cast<long long>(balls[i].predicted)).cell(static_cast<long long>(conf)).cell(balls[i].delta)
            .end_row();
    }
    rep.csv("delta_balls.csv", w);
    rep.metric("epsilon", lab.config().get_real("audit.epsilon"));
    rep.metric("centres", static_cast<double>(balls.size()));
    rep.metric("confident", static_cast<double>(confident));
    rep.metric("certified", static_cast<double>(certified));
    rep.metric("certified_fraction", confident ? static_cast<double>(certified) / static_cast<double>(confident) : 0.0);
    rep.metric("median_delta", deltas.empty() ? 0.0 : median(deltas));
    rep.metric("hmc_acceptance_rate", lab.hmc().acceptance_rate);
    return rep.finish();
}

using Runner = ExperimentResult (*)(Lab&, const fs::path&);

const std::vector<std::pair<std::string, Runner>>& registry() {
    static const std::vector<std::pair<std::string, Runner>> r = {
        {"fig2_density_vs_step", fig2_density_vs_step},
        {"fig5_mi_vs_density", fig5_mi_vs_density},
        {"table1_hmc_vs_det", table1_hmc_vs_det},
        {"fig7_9_holes", fig7_9_holes},
        {"table3_latent_attack", table3_latent_attack},
        {"table4_ensemble_defence", table4_ensemble_defence},
        {"table2_auc_analog", table2_auc_analog},
        {"spheres_invariance", spheres_invariance},
        {"lemma1_audit", lemma1_audit},
        {"appendixA_invariance", appendixA_invariance},
    };
    return r;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, fn] : registry()) n.push_back(name);
        return n;
    }();
    return names;
}

ExperimentResult run_experiment(const std::string& name, Lab& lab, const fs::path& out_dir) {
    for (const auto& [n, fn] : registry())
        if (n == name) return fn(lab, out_dir);
    std::string valid;
    for (const auto& n : experiment_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw Error("unknown experiment \"" + name + "\"; valid names: " + valid);
}

}  // namespace uqadv
