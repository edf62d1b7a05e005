#include "uqadv/cli.hpp"

#include <ostream>

#include <CLI11.hpp>

#include "uqadv/attacks.hpp"
#include "uqadv/audit.hpp"
#include "uqadv/checkpoint.hpp"
#include "uqadv/config.hpp"
#include "uqadv/experiments.hpp"
#include "uqadv/io.hpp"
#include "uqadv/stats.hpp"
#include "uqadv/uncertainty.hpp"

namespace uqadv {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    bool print_config = false;

    std::optional<long long> n;
    std::optional<long long> seed;
    std::string out;
    std::string method;
    std::string data;
    std::string model;
    std::string task = "manifold";
    std::string report;
    std::string experiment;
    std::optional<double> eps;
    std::optional<int> target;
    std::string gradient_source = "ensemble_mean";
    long long count = 0;
};

RunConfig load_config(const Options& o) {
    if (o.config_path.empty()) return parse_config_text("", o.overrides, "<defaults>");
    return parse_config(o.config_path, o.overrides);
}

fs::path existing(const std::string& path, const std::string& flag) {
    if (!fs::exists(path)) throw Error(flag + ": file not found: " + path);
    return path;
}

int argmax(const Eigen::VectorXd& v) {
    Index i = 0;
    v.maxCoeff(&i);
    return static_cast<int>(i);
}

/// Dropout model files become MC-dropout ensembles; everything else loads as is.
PosteriorEnsemble load_model(const RunConfig& cfg, const std::string& path) {
    PosteriorEnsemble ens = load_any(existing(path, "--model"));
    if (ens.size() == 1 && !ens.members.front().mask && ens.spec->dropout_rate > 0.0)
        ens = mc_dropout_ensemble(ens.members.front().params, static_cast<int>(cfg.get_int("dropout.passes")),
                                  derive_seed(cfg.get_seed("seed"), "dropout-passes"));
    return ens;
}

ManifoldDataset load_data(const std::string& path) { return load_dataset(existing(path, "--data")); }

SpheresDataset sphere_data(const RunConfig& cfg, Index per_sphere, std::string_view tag) {
    return make_spheres(cfg.get_int("spheres.dim"), cfg.get_real("spheres.r_inner"), cfg.get_real("spheres.r_outer"),
                        per_sphere, derive_seed(cfg.get_seed("seed"), tag));
}

int cmd_gen_data(const Options& o, const RunConfig& cfg, std::ostream& out) {
    Lab lab(cfg);
    const Index n = o.n ? *o.n : cfg.get_int("data.n");
    if (n < 1) throw ConfigError("--n must be positive");
    const std::uint64_t seed = o.seed ? static_cast<std::uint64_t>(*o.seed) : cfg.get_seed("seed");
    const ManifoldDataset d =
        sample_dataset(lab.mixture(), lab.decoder(), lab.quadrature(), n, derive_seed(seed, "train-data"));
    save_dataset(o.out, d);
    out << "wrote " << d.size() << " points to " << o.out << "\n";
    return 0;
}

int cmd_train(const Options& o, const RunConfig& cfg, std::ostream& out) {
    const std::uint64_t seed = cfg.get_seed("seed");
    if (o.task == "spheres" || o.task == "spheres-radial") {
        if (o.method != "map") throw ConfigError("--task " + o.task + " supports --method map only");
        const SpheresDataset s = sphere_data(cfg, cfg.get_int("spheres.n"), "spheres-train");
        NetworkSpec spec;
        spec.input_dim = s.dim;
        for (long long h : cfg.get_int_list("spheres.hidden")) spec.hidden_sizes.push_back(h);
        spec.num_classes = 2;
        if (o.task == "spheres-radial") spec.feature_mode = FeatureMode::radial;
        const ParamVector p = train_map(spec, s.labelled(), train_config(cfg, derive_seed(seed, o.task), false));
        save_params(o.out, p);
        out << "train accuracy " << accuracy(p, s.labelled()) << "\nwrote " << o.out << "\n";
        return 0;
    }
    if (o.data.empty()) throw ConfigError("train: --data is required (a dataset written by gen-data)");
    const ManifoldDataset d = load_data(o.data);
    const LabelledData data = d.labelled();
    const Index dim = d.inputs.cols();
    if (o.method == "map") {
        const ParamVector p =
            train_map(classifier_spec(cfg, dim, d.num_classes, false), data, train_config(cfg, derive_seed(seed, "map"), false));
        save_params(o.out, p);
        out << "train accuracy " << accuracy(p, data) << "\n";
    } else if (o.method == "dropout") {
        const ParamVector p = train_map(classifier_spec(cfg, dim, d.num_classes, true), data,
                                        train_config(cfg, derive_seed(seed, "dropout-model"), true));
        save_params(o.out, p);
        out << "train accuracy " << accuracy(p, data) << "\n";
    } else if (o.method == "hmc") {
        const NetworkSpec spec = classifier_spec(cfg, dim, d.num_classes, false);
        std::optional<ParamVector> init;
        if (cfg.get_text("hmc.start") == "map")
            init = train_map(spec, data, train_config(cfg, derive_seed(seed, "map"), false));
        else if (cfg.get_text("hmc.start") != "random")
            throw ConfigError("hmc.start must be map or random");
        const HmcResult r = hmc_sample(spec, data, hmc_config(cfg, derive_seed(seed, "hmc")), init);
        save_ensemble(o.out, r.ensemble);
        out << "acceptance rate " << r.acceptance_rate << "\n";
        for (const auto& w : r.warnings) out << "warning: " << w << "\n";
    } else if (o.method == "ensemble") {
        const PosteriorEnsemble e = deep_ensemble(classifier_spec(cfg, dim, d.num_classes, true), data,
                                                  train_config(cfg, 0, true),
                                                  static_cast<int>(cfg.get_int("ensemble.members")),
                                                  derive_seed(seed, "ensemble"),
                                                  static_cast<int>(cfg.get_int("ensemble.passes")));
        save_ensemble(o.out, e);
        out << "members " << e.size() << "\n";
    }
    out << "wrote " << o.out << "\n";
    return 0;
}

GradientSource parse_source(const std::string& s) {
    if (s == "ensemble_mean") return GradientSource::ensemble_mean;
    if (s == "fixed_member") return GradientSource::fixed_member;
    if (s == "fresh_posterior_sample") return GradientSource::fresh_posterior_sample;
    throw ConfigError("--gradient-source must be ensemble_mean, fixed_member or fresh_posterior_sample");
}

int cmd_attack(const Options& o, const RunConfig& cfg, std::ostream& out) {
    const std::uint64_t seed = cfg.get_seed("seed");
    const double eps = o.eps ? *o.eps : cfg.get_real_list("attack.eps").back();
    AttackConfig ac;
    ac.epsilon = eps;
    ac.iterations = static_cast<int>(cfg.get_int("attack.iterations"));
    ac.momentum = cfg.get_real("attack.momentum");
    ac.gradient_source = parse_source(o.gradient_source);
    ac.seed = derive_seed(seed, "cli-attack");

    if (o.method == "sphere") {
        const PosteriorEnsemble ens = load_model(cfg, o.model);
        const Index trials = o.count > 0 ? o.count : cfg.get_int("spheres.trials");
        const SpheresDataset s = sphere_data(cfg, (trials + 1) / 2, "spheres-test");
        ac.norm = AttackNorm::l2;
        ac.epsilon = 2.0 * std::max(s.r_inner, s.r_outer) + 1e-9;
        ac.iterations = static_cast<int>(cfg.get_int("spheres.steps"));
        ac.step_size = cfg.get_real("spheres.step_size");
        std::vector<AttackTrajectory> runs;
        for (Index i = 0; i < trials; ++i)
            runs.push_back(sphere_projected_attack(ens, s.points.row(i).transpose(), s.labels[static_cast<std::size_t>(i)], ac));
        io::write_text(o.out, trajectories_csv(runs));
        out << "success rate " << success_rate(runs) << "\n";
        return 0;
    }

    if (o.data.empty()) throw ConfigError("attack: --data is required");
    const ManifoldDataset d = load_data(o.data);
    const PosteriorEnsemble ens = load_model(cfg, o.model);

    if (o.method == "latent-hole") {
        Lab lab(cfg);
        const auto cands = latent_hole_attack(ens, lab.grid(), d.latents, cfg.get_real("holes.mi_threshold"),
                                              static_cast<std::size_t>(cfg.get_int("holes.top_k")));
        io::CsvWriter w({"rank", "grid_index", "z1", "z2", "distance", "mi", "confidence", "predicted"});
        long long garbage = 0;
        for (std::size_t r = 0; r < cands.size(); ++r) {
            const auto& c = cands[r];
            garbage += c.confidence > cfg.get_real("holes.confidence");
            w.cell(static_cast<long long>(r)).cell(static_cast<long long>(c.grid_index)).cell(c.latent[0])
                .cell(c.latent[1]).cell(c.distance).cell(c.mutual_information).cell(c.confidence)
                .cell(static_cast<long long>(c.predicted)).end_row();
        }
        w.save(o.out);
        out << "candidates " << cands.size() << ", above confidence bar " << garbage << "\n";
        return 0;
    }

    set_clip_from_data(ac, d.inputs);
    const Index count = std::min<Index>(o.count > 0 ? o.count : cfg.get_int("attack.examples"), d.size());
    if (o.method == "noise") {
        Rng rng(derive_seed(seed, "cli-noise"));
        io::CsvWriter w({"index", "label", "clean_pred", "noisy_pred", "linf_norm"});
        long long flips = 0;
        for (Index i = 0; i < count; ++i) {
            const Eigen::VectorXd x = d.inputs.row(i).transpose();
            const Eigen::VectorXd xn = noise_control(x, ac, rng);
            const int a = argmax(predictive(ens, x).mean_probs), b = argmax(predictive(ens, xn).mean_probs);
            flips += a != b;
            w.cell(static_cast<long long>(i)).cell(static_cast<long long>(d.labels[static_cast<std::size_t>(i)]))
                .cell(static_cast<long long>(a)).cell(static_cast<long long>(b))
                .cell((xn - x).lpNorm<Eigen::Infinity>()).end_row();
        }
        w.save(o.out);
        out << "label change rate " << static_cast<double>(flips) / static_cast<double>(count) << "\n";
        return 0;
    }

    std::vector<AttackTrajectory> runs;
    for (Index i = 0; i < count; ++i) {
        const Eigen::VectorXd x = d.inputs.row(i).transpose();
        const int y = d.labels[static_cast<std::size_t>(i)];
        if (o.method == "fgm") {
            ac.iterations = static_cast<int>(cfg.get_int("attack.fgm_steps"));
            runs.push_back(fgm(ens, x, y, ac, o.target));
        } else {
            runs.push_back(mim(ens, x, y, ac));
        }
    }
    io::write_text(o.out, trajectories_csv(runs));
    out << "success rate " << success_rate(runs) << "\n";
    return 0;
}

int cmd_eval(const Options& o, const RunConfig& cfg, std::ostream& out) {
    const PosteriorEnsemble ens = load_model(cfg, o.model);
    if (o.report == "grid-uncertainty") {
        Lab lab(cfg);
        const GridDataset& g = lab.grid();
        const Eigen::VectorXd& dens = lab.grid_log_density();
        const auto pds = predictive_batch(ens, g.inputs);
        io::CsvWriter w({"grid_index", "z1", "z2", "gt_log_density", "mi", "confidence", "predicted"});
        std::vector<double> mi, d;
        for (Index i = 0; i < g.size(); ++i) {
            const auto& pd = pds[static_cast<std::size_t>(i)];
            mi.push_back(mutual_information(pd, ens.weights).mutual_information);
            d.push_back(dens[i]);
            const int c = argmax(pd.mean_probs);
            w.cell(static_cast<long long>(i)).cell(g.latents(i, 0)).cell(g.latents(i, 1)).cell(dens[i]).cell(mi.back())
                .cell(pd.mean_probs[c]).cell(static_cast<long long>(c)).end_row();
        }
        w.save(o.out);
        if (ens.size() > 1) out << "spearman(mi, gt_log_density) " << spearman(mi, d) << "\n";
        return 0;
    }
    if (o.data.empty()) throw ConfigError("eval: --data is required for report " + o.report);
    const ManifoldDataset d = load_data(o.data);
    if (o.report == "accuracy") {
        const auto pds = predictive_batch(ens, d.inputs);
        double correct = 0.0, mi = 0.0;
        for (std::size_t i = 0; i < pds.size(); ++i) {
            correct += argmax(pds[i].mean_probs) == d.labels[i];
            mi += mutual_information(pds[i], ens.weights).mutual_information;
        }
        io::Summary s;
        s.comment(std::string("entropy unit: ") + kEntropyUnit)
            .set("points", static_cast<long long>(d.size()))
            .set("accuracy", correct / static_cast<double>(d.size()))
            .set("mean_mi", mi / static_cast<double>(d.size()));
        out << s.str();
        if (!o.out.empty()) s.save(o.out);
        return 0;
    }
    // delta-balls
    const auto balls = estimate_delta_balls(ens, d.inputs, cfg.get_real("audit.epsilon"),
                                            static_cast<int>(cfg.get_int("audit.probes")),
                                            cfg.get_real_list("audit.radii"),
                                            derive_seed(cfg.get_seed("seed"), "delta-balls"));
    io::CsvWriter w({"index", "confident", "delta"});
    long long confident = 0, certified = 0;
    for (std::size_t i = 0; i < balls.size(); ++i) {
        confident += balls[i].probes > 0;
        certified += balls[i].delta > 0.0;
        w.cell(static_cast<long long>(i)).cell(static_cast<long long>(balls[i].probes > 0)).cell(balls[i].delta).end_row();
    }
    w.save(o.out);
    out << "confident " << confident << ", certified " << certified << "\n";
    return 0;
}

int cmd_run(const Options& o, const RunConfig& cfg, std::ostream& out) {
    std::string name = o.experiment.empty() ? cfg.get_text("experiment") : o.experiment;
    if (name.empty()) throw ConfigError("run: --experiment is required (or set experiment in the config)");
    const fs::path dir = o.out.empty() ? fs::path(cfg.get_text("output_dir")) : fs::path(o.out);
    Lab lab(cfg);
    std::vector<std::string> names = name == "all" ? experiment_names() : std::vector<std::string>{name};
    for (const auto& n : names) {
        const ExperimentResult r = run_experiment(n, lab, dir);
        out << n << " -> " << r.directory.string() << "\n";
        for (const auto& [k, v] : r.metrics) out << "  " << k << " = " << io::format_double(v) << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Uncertainty and adversarial-example experiments on synthetic manifold data"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&o](CLI::App* c) {
        c->add_option("--config", o.config_path, "key = value configuration file");
        c->add_option("--set", o.overrides, "override a config key (key=value), repeatable")->take_all();
        c->add_flag("--print-config", o.print_config, "print the effective configuration and exit");
    };
    add_common(&app);

    auto* gen = app.add_subcommand("gen-data", "sample a manifold dataset");
    gen->add_option("--n", o.n, "number of points (default data.n)");
    gen->add_option("--seed", o.seed, "master seed (default: config seed)")->check(CLI::NonNegativeNumber);
    gen->add_option("--out", o.out, "output dataset file")->required();

    auto* train = app.add_subcommand("train", "train a model or sample a posterior");
    train->add_option("--method", o.method, "map | dropout | hmc | ensemble")
        ->required()
        ->check(CLI::IsMember({"map", "dropout", "hmc", "ensemble"}));
    train->add_option("--data", o.data, "training dataset file (from gen-data)");
    train->add_option("--task", o.task, "manifold | spheres | spheres-radial")
        ->check(CLI::IsMember({"manifold", "spheres", "spheres-radial"}));
    train->add_option("--out", o.out, "output checkpoint")->required();

    auto* attack = app.add_subcommand("attack", "attack a model");
    attack->add_option("--method", o.method, "fgm | mim | noise | latent-hole | sphere")
        ->required()
        ->check(CLI::IsMember({"fgm", "mim", "noise", "latent-hole", "sphere"}));
    attack->add_option("--model", o.model, "model or ensemble checkpoint")->required();
    attack->add_option("--data", o.data, "dataset to attack (latent-hole: the training set)");
    attack->add_option("--eps", o.eps, "perturbation budget (default: last attack.eps)");
    attack->add_option("--target", o.target, "target class (fgm only)");
    attack->add_option("--gradient-source", o.gradient_source,
                       "ensemble_mean | fixed_member | fresh_posterior_sample");
    attack->add_option("--count", o.count, "number of inputs to attack");
    attack->add_option("--out", o.out, "output CSV")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a model");
    eval->add_option("--report", o.report, "accuracy | grid-uncertainty | delta-balls")
        ->required()
        ->check(CLI::IsMember({"accuracy", "grid-uncertainty", "delta-balls"}));
    eval->add_option("--model", o.model, "model or ensemble checkpoint")->required();
    eval->add_option("--data", o.data, "dataset file");
    eval->add_option("--out", o.out, "output file");

    auto* run = app.add_subcommand("run", "run a named experiment end to end");
    run->add_option("--experiment", o.experiment, "experiment name, or all");
    run->add_option("--out", o.out, "output directory (default output_dir)");

    for (auto* c : {gen, train, attack, eval, run}) add_common(c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig cfg = load_config(o);
        if (o.print_config) {
            out << cfg.to_text();
            return 0;
        }
        if (gen->parsed()) return cmd_gen_data(o, cfg, out);
        if (train->parsed()) return cmd_train(o, cfg, out);
        if (attack->parsed()) return cmd_attack(o, cfg, out);
        if (eval->parsed()) return cmd_eval(o, cfg, out);
        return cmd_run(o, cfg, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace uqadv
