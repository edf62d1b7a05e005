// Acceptance suite: one PASS/FAIL line per criterion. Experiments run at the default
// configuration; outputs land in ./acceptance_runs for inspection.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "uqadv/diffgraph.hpp"
#include "uqadv/experiments.hpp"
#include "uqadv/manifold.hpp"
#include "uqadv/stats.hpp"

using namespace uqadv;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kFdTolerance = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kFdSeconds = 10.0;
constexpr double kMomentZ = 3.0;
constexpr double kAcceptLo = 0.6, kAcceptHi = 0.95;
constexpr double kHmcSeconds = 60.0;
constexpr double kIsMedianError = 0.05;
constexpr Index kIsSamples = 10000;
constexpr double kIsSeconds = 60.0;
constexpr double kFig2Rho = -0.5;
constexpr double kFig2Below = 0.9;
constexpr double kFig5Rho = -0.4;
constexpr double kTable1DetSuccess = 0.5;
constexpr double kAucGap = 0.05;
constexpr double kRotationTolerance = 1e-9;
constexpr double kCertifiedFraction = 0.95;

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << "  " << id << ". " << name << "  [" << detail << "]" << std::endl;
    if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

/// Runs `body`, turning an exception into a FAIL line.
void criterion(int id, const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("error: ") + e.what());
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(derive_seed(2024, "fd-config", seed));
        std::uniform_int_distribution<int> dim(2, 8), width(2, 10), layers(1, 3), classes(2, 4), rows(1, 6);
        NetworkSpec spec;
        spec.input_dim = dim(rng);
        const int depth = layers(rng);
        for (int l = 0; l < depth; ++l) spec.hidden_sizes.push_back(width(rng));
        spec.num_classes = classes(rng);
        spec.activation = seed % 2 ? Activation::sine : Activation::relu;
        const bool dropout = seed % 3 == 0;
        if (dropout) spec.dropout_rate = 0.3;
        const Index n = rows(rng);

        // Random biases too: zero-initialised biases put relu units exactly on their kink.
        const ParamVector p = make_params(spec, 0.5 * standard_normal(spec.param_count(), rng));
        const Eigen::VectorXd xv = standard_normal(n * spec.input_dim, rng);
        Eigen::VectorXd labels(n);
        std::uniform_int_distribution<int> label(0, spec.num_classes - 1);
        for (Index i = 0; i < n; ++i) labels[i] = label(rng);
        const Tensor xt({n, spec.input_dim}, xv), pt = Tensor::vector(p.values), lt = Tensor::vector(labels);
        Inputs in;
        in.bind("x", xt).bind("params", pt).bind("labels", lt);
        const auto masks = dropout ? mask_tensors(spec, sample_mask(spec, seed), n) : std::vector<Tensor>{};
        for (std::size_t l = 0; l < masks.size(); ++l) in.bind("mask" + std::to_string(l), masks[l]);
        const Graph g = build_loss_graph(spec, dropout, 1.0, 1e-3);
        worst = std::max({worst, finite_diff_check(g, in, "params", kFdStep), finite_diff_check(g, in, "x", kFdStep)});
    }
    const double secs = seconds_since(t0);
    report(1, "gradient correctness", worst <= kFdTolerance && secs < kFdSeconds,
           fmt("worst relative error %.2e over 100 configs, %.2f s", worst, secs));
}

void hmc_sanity() {
    const auto t0 = std::chrono::steady_clock::now();
    const testing::ConjugateProblem prob;
    HmcConfig c;
    c.seed = 11;
    const ChainResult r = hmc_chain(prob.potential(), Eigen::Vector2d::Zero(), c);
    const auto m = testing::check_moments(r.samples, prob.mean, prob.cov);
    const double secs = seconds_since(t0);
    report(2, "HMC sanity", m.worst_z <= kMomentZ && r.acceptance_rate >= kAcceptLo && r.acceptance_rate <= kAcceptHi &&
                                secs < kHmcSeconds,
           fmt("worst |z| %.2f, acceptance %.3f, %.2f s", m.worst_z, r.acceptance_rate, secs));
}

void density_estimator() {
    const auto t0 = std::chrono::steady_clock::now();
    const ManifoldConfig mc;
    const LatentMixture mix = make_mixture(mc);
    const Decoder dec(mc);
    const QuadratureGrid quad(mix, dec, mixture_bounds(mix, 7.0), 200);
    const ManifoldDataset pts = sample_dataset(mix, dec, quad, 50, derive_seed(2024, "is-points"));
    std::vector<double> err;
    for (Index i = 0; i < pts.size(); ++i) {
        const IsEstimate est = image_log_density_is(pts.inputs.row(i).transpose(), mix, dec, kIsSamples,
                                                    derive_seed(2024, "is", static_cast<std::uint64_t>(i)));
        err.push_back(std::abs(std::exp(est.log_density - pts.gt_log_density[i]) - 1.0));
    }
    const double med = median(err);
    const double secs = seconds_since(t0);
    report(3, "importance-sampling density", med <= kIsMedianError && secs < kIsSeconds,
           fmt("median relative error %.4f on 50 points, %.2f s", med, secs));
}

}  // namespace

int main() {
    const auto start = std::chrono::steady_clock::now();
    const fs::path out = fs::current_path() / "acceptance_runs";
    fs::remove_all(out);

    criterion(1, "gradient correctness", gradient_correctness);
    criterion(2, "HMC sanity", hmc_sanity);
    criterion(3, "importance-sampling density", density_estimator);

    Lab lab{RunConfig{}};
    const fs::path main_dir = out / "default";
    std::map<std::string, ExperimentResult> results;
    auto run = [&](const std::string& name) -> const ExperimentResult& {
        auto it = results.find(name);
        if (it == results.end()) {
            const auto t0 = std::chrono::steady_clock::now();
            it = results.emplace(name, run_experiment(name, lab, main_dir)).first;
            std::cout << "  (" << name << " " << fmt("%.1f", seconds_since(t0)) << " s)" << std::endl;
        }
        return it->second;
    };

    criterion(4, "density falls along attacks", [&] {
        const auto& r = run("fig2_density_vs_step");
        const double rho = r.metric("targeted_median_rho"), below = r.metric("targeted_fraction_final_below_initial");
        report(4, "density falls along attacks", rho < kFig2Rho && below >= kFig2Below,
               fmt("median rho %.3f, final below initial %.3f, MAP success %.2f", rho, below,
                   r.metric("targeted_success")));
    });

    criterion(5, "HMC MI tracks density", [&] {
        const auto& r = run("fig5_mi_vs_density");
        const double rho = r.metric("spearman_hmc");
        report(5, "HMC MI tracks density", rho <= kFig5Rho,
               fmt("spearman hmc %.3f (dropout %.3f, ensemble %.3f), acceptance %.3f", rho,
                   r.metric("spearman_dropout"), r.metric("spearman_ensemble"), r.metric("hmc_acceptance_rate")));
    });

    criterion(6, "HMC resists transfer", [&] {
        const auto& r = run("table1_hmc_vs_det");
        const double det_adv = r.metric("det_adv_success_large"), det_noise = r.metric("det_noise_success_large");
        const double hmc_adv = r.metric("hmc_adv_success_large"), hmc_noise = r.metric("hmc_noise_success_large");
        const double hmc_h = r.metric("hmc_adv_entropy_large"), det_h = r.metric("det_adv_entropy_large");
        const bool pass = det_adv >= kTable1DetSuccess && (hmc_adv - hmc_noise) < (det_adv - det_noise) && hmc_h > det_h;
        report(6, "HMC resists transfer", pass,
               fmt("det adv %.3f noise %.3f | hmc adv %.3f noise %.3f | entropy hmc %.3f det %.3f", det_adv, det_noise,
                   hmc_adv, hmc_noise, hmc_h, det_h));
    });

    criterion(7, "dropout has holes HMC fills", [&] {
        const auto& r = run("fig7_9_holes");
        const double fh = r.metric("fraction_outside_above_hmc"), fd = r.metric("fraction_outside_above_dropout");
        const double holes = r.metric("dropout_holes");
        report(7, "dropout has holes HMC fills", fh > fd && holes >= 1.0,
               fmt("outside fraction above H(eps): hmc %.3f dropout %.3f; dropout holes %.0f of %.0f outside", fh, fd,
                   holes, r.metric("outside_count")));
    });

    criterion(8, "ensembles beat single dropout", [&] {
        const auto& t3 = run("table3_latent_attack");
        const auto& t4 = run("table4_ensemble_defence");
        const auto& t2 = run("table2_auc_analog");
        const double gd = t3.metric("garbage_dropout"), ge = t3.metric("garbage_ensemble");
        const double sd = t4.metric("success_dropout_large"), se = t4.metric("success_ensemble_large");
        const double ad = t2.metric("auc_all_dropout_large"), ae = t2.metric("auc_all_ensemble_large");
        const bool pass = gd >= 1.0 && ge < gd && se < sd && ae - ad >= kAucGap;
        report(8, "ensembles beat single dropout", pass,
               fmt("garbage dropout %.0f ensemble %.0f | MIM success dropout %.3f ensemble %.3f | AUC dropout %.3f "
                   "ensemble %.3f",
                   gd, ge, sd, se, ad, ae));
    });

    criterion(9, "spheres invariance", [&] {
        const auto& r = run("spheres_invariance");
        const double radial = r.metric("success_radial"), plain = r.metric("success_plain");
        const double dev = r.metric("max_logit_deviation_radial");
        report(9, "spheres invariance", radial == 0.0 && plain > 0.0 && dev <= kRotationTolerance,
               fmt("success radial %.3f plain %.3f, radial max logit deviation %.2e", radial, plain, dev));
    });

    criterion(10, "delta-ball certification", [&] {
        const auto& r = run("lemma1_audit");
        const double f = r.metric("certified_fraction");
        report(10, "delta-ball certification", f >= kCertifiedFraction,
               fmt("certified %.0f of %.0f confident (%.4f), median delta %.3f", r.metric("certified"),
                   r.metric("confident"), f, r.metric("median_delta")));
    });

    criterion(11, "determinism", [&] {
        const std::vector<std::string> names{"fig2_density_vs_step", "spheres_invariance", "appendixA_invariance"};
        for (const auto& n : names) run(n);
        Lab fresh{RunConfig{}};
        const fs::path again = out / "repeat";
        std::size_t compared = 0;
        std::vector<std::string> differing;
        for (const auto& n : names) {
            const ExperimentResult a = results.at(n);
            const ExperimentResult b = run_experiment(n, fresh, again);
            for (const auto& f : a.files) {
                if (f.extension() != ".csv") continue;
                ++compared;
                if (slurp(f) != slurp(b.directory / f.filename())) differing.push_back(n + "/" + f.filename().string());
            }
        }
        std::string detail = fmt("%zu csv files compared", compared);
        for (const auto& d : differing) detail += ", differs: " + d;
        report(11, "determinism", compared > 0 && differing.empty(), detail);
    });

    // Remaining experiments, for the record.
    for (const auto& n : experiment_names()) run(n);

    std::cout << fmt("total %.1f s, %d failing", seconds_since(start), failures) << std::endl;
    return failures == 0 ? 0 : 1;
}
