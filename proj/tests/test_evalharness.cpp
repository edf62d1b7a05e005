#include <doctest.h>

#include <filesystem>

#include "uqadv/audit.hpp"
#include "uqadv/config.hpp"
#include "uqadv/experiments.hpp"
#include "uqadv/stats.hpp"
#include "uqadv/uncertainty.hpp"

using namespace uqadv;

namespace {

AttackTrajectory with_density(std::vector<double> density, bool success = false) {
    AttackTrajectory t;
    for (std::size_t i = 0; i < density.size(); ++i) {
        t.inputs.push_back(Eigen::VectorXd::Constant(1, static_cast<double>(i)));
        t.mean_probs.push_back(Eigen::Vector2d(1.0, 0.0));
        t.perturbation_norm.push_back(0.0);
        t.mutual_information.push_back(0.0);
    }
    t.gt_log_density = std::move(density);
    t.success = success;
    return t;
}

// Logistic model whose confidence depends only on x0: logits (s * x0, 0).
PosteriorEnsemble ramp(double s, Index d = 2) {
    NetworkSpec spec;
    spec.input_dim = d;
    spec.num_classes = 2;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.param_count());
    v[0] = s;
    return deterministic_ensemble(make_params(spec, v));
}

}  // namespace

TEST_CASE("success rate") {
    std::vector<AttackTrajectory> ts(10);
    for (int i = 0; i < 3; ++i) ts[static_cast<std::size_t>(i)].success = true;
    CHECK(success_rate(ts) == doctest::Approx(0.3));
    CHECK_THROWS(success_rate({}));
}

TEST_CASE("roc and auc") {
    SUBCASE("perfect separation") {
        const auto r = roc_auc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true});
        CHECK(r.auc == 1.0);
        CHECK(r.roc.front().fpr == 0.0);
        CHECK(r.roc.front().tpr == 0.0);
        CHECK(r.roc.back().fpr == 1.0);
        CHECK(r.roc.back().tpr == 1.0);
    }
    SUBCASE("reversed separation") {
        CHECK(roc_auc({0.9, 0.8, 0.1}, {false, false, true}).auc == 0.0);
    }
    SUBCASE("all ties give one half") {
        CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}).auc == doctest::Approx(0.5));
    }
    SUBCASE("pair counting oracle") {
        Rng rng(1);
        std::uniform_int_distribution<int> u(0, 9);
        std::vector<double> s;
        std::vector<bool> y;
        for (int i = 0; i < 200; ++i) {
            s.push_back(u(rng));
            y.push_back(i % 3 == 0 ? true : u(rng) > 6);
        }
        double wins = 0.0, pairs = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < s.size(); ++j)
                if (y[i] && !y[j]) {
                    pairs += 1.0;
                    wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
                }
        const auto r = roc_auc(s, y);
        CHECK(r.auc == doctest::Approx(wins / pairs).epsilon(1e-12));
        for (std::size_t k = 1; k < r.roc.size(); ++k) {
            CHECK(r.roc[k].fpr >= r.roc[k - 1].fpr);
            CHECK(r.roc[k].tpr >= r.roc[k - 1].tpr);
        }
        // Invariant under strictly increasing transforms of the score.
        std::vector<double> t;
        for (double v : s) t.push_back(std::exp(3.0 * v) - 7.0);
        CHECK(roc_auc(t, y).auc == r.auc);
    }
    SUBCASE("single class is rejected") {
        CHECK_THROWS(roc_auc({0.1, 0.2}, {true, true}));
        CHECK_THROWS(roc_auc({0.1}, {true, false}));
    }
}

TEST_CASE("rank statistics") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3}, {1, 8, 27}) == doctest::Approx(1.0));
    CHECK_THROWS(spearman({1, 1, 1}, {1, 2, 3}));
    CHECK_THROWS(spearman({1, 2}, {1, 2, 3}));
    const auto ranks = average_ranks({3.0, 1.0, 3.0, 2.0});
    CHECK(ranks == std::vector<double>{3.5, 1.0, 3.5, 2.0});
    CHECK(median({3.0, 1.0, 2.0, 10.0}) == 2.5);
    CHECK(stddev({1.0}) == 0.0);
    CHECK(stddev({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("density trajectory report") {
    SUBCASE("monotone decreasing trajectories") {
        const auto r = density_trajectory_report({with_density({5, 4, 3, 2}), with_density({9, 7, 6, 1})});
        CHECK(r.median_rho == doctest::Approx(-1.0));
        CHECK(r.fraction_final_below_initial == 1.0);
        CHECK(r.excluded == 0);
        CHECK(r.step_mean == std::vector<double>{7, 5.5, 4.5, 1.5});
    }
    SUBCASE("constant trajectories are excluded") {
        const auto r = density_trajectory_report({with_density({2, 2, 2}), with_density({1, 2, 3})});
        CHECK(r.excluded == 1);
        CHECK_FALSE(r.trajectory_rho[0].has_value());
        CHECK(r.median_rho == doctest::Approx(1.0));
        CHECK(r.fraction_final_below_initial == 0.0);
    }
    SUBCASE("densities are required") {
        AttackTrajectory t = with_density({1, 2});
        t.gt_log_density.reset();
        CHECK_THROWS(density_trajectory_report({t}));
        CHECK_THROWS(density_trajectory_report({with_density({1, 2}), with_density({1, 2, 3})}));
    }
}

TEST_CASE("delta-ball estimation") {
    const std::vector<double> schedule{0.01, 0.1, 0.5, 1.0};
    SUBCASE("a constant confident model certifies the whole schedule") {
        NetworkSpec spec;
        spec.input_dim = 3;
        spec.num_classes = 2;
        Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.param_count());
        v[spec.param_count() - 2] = 10.0;  // bias of class 0
        const auto e = deterministic_ensemble(make_params(spec, v));
        const auto b = estimate_delta_ball(e, Eigen::Vector3d(0.1, 0.2, 0.3), 0.1, 50, schedule, 1);
        CHECK(b.delta == 1.0);
        CHECK(b.predicted == 0);
        CHECK(estimate_delta_ball(e, Eigen::Vector3d(0, 0, 0), 0.1, 50, {0.0}, 1).delta == 0.0);
    }
    SUBCASE("a ramp certifies up to the confidence boundary") {
        // p0 = sigmoid(4 x0) > 0.9 <=> x0 > log(9)/4 = 0.549.
        const auto e = ramp(4.0);
        const Eigen::Vector2d x(1.2, 0.0);
        const auto b = estimate_delta_ball(e, x, 0.1, 100, schedule, 2);
        CHECK(b.delta == 0.5);
        // Looser eps allows at least as large a ball.
        const auto loose = estimate_delta_ball(e, x, 0.2, 100, schedule, 2);
        CHECK(loose.delta >= b.delta);
        CHECK(is_high_confidence(e, x, 0.1));
        CHECK_FALSE(is_high_confidence(e, Eigen::Vector2d(0.1, 0.0), 0.1));
        CHECK_THROWS(estimate_delta_ball(e, Eigen::Vector2d(0.1, 0.0), 0.1, 100, schedule, 2));
    }
    SUBCASE("batch estimates and membership") {
        const auto e = ramp(4.0);
        RowMatrix xs(2, 2);
        xs << 1.2, 0.0, 0.1, 0.0;
        const auto balls = estimate_delta_balls(e, xs, 0.1, 50, schedule, 3);
        CHECK(balls[0].delta == 0.5);
        CHECK(balls[1].delta == 0.0);
        RowMatrix pts(3, 2);
        pts << 1.2, 0.4, 1.2, 0.6, 0.1, 0.0;
        CHECK(inside_delta_balls(pts, balls) == std::vector<bool>{true, false, false});
    }
}

TEST_CASE("idealised audit") {
    GridDataset g;
    g.latents = RowMatrix::Zero(3, 2);
    g.inputs.resize(3, 2);
    g.inputs << 0.0, 0.0, 5.0, 5.0, -5.0, 5.0;
    const std::vector<bool> inside{true, false, false};
    SUBCASE("a single member never exceeds the floor") {
        const auto a = idealised_audit(ramp(1.0), g, inside, 0.1, "single");
        CHECK(a.outside_count == 2);
        CHECK(a.fraction_outside_above == 0.0);
        CHECK(a.h_eps == doctest::Approx(high_confidence_threshold(0.1)));
        CHECK(a.method == "single");
    }
    SUBCASE("disagreeing members lift the outside points") {
        const auto a = ramp(5.0), b = ramp(-5.0);
        const auto e = make_ensemble(a.spec, MemberKind::independent, {a.members[0], b.members[0]});
        const auto audit = idealised_audit(e, g, inside, 0.1);
        CHECK(audit.outside_above == 2);
        CHECK(audit.fraction_outside_above == 1.0);
        CHECK(audit.points[0].inside);
        CHECK(audit.points[1].mutual_information > std::log(2.0) - 1e-6);
    }
}

TEST_CASE("configuration precedence and errors") {
    const RunConfig defaults;
    CHECK(defaults.get_int("seed") == 0);
    CHECK(defaults.get_real("hmc.prior_precision") == 1.0);

    const RunConfig c = parse_config_text("seed = 5\n# comment\nattack.eps = 0.2, 0.3\nseed = 6\n", {"seed=7"});
    CHECK(c.get_int("seed") == 7);
    CHECK(c.get_real_list("attack.eps") == std::vector<double>{0.2, 0.3});
    CHECK(parse_config_text("seed = 5\nseed = 6\n").get_int("seed") == 6);

    try {
        parse_config_text("seed = 1\nfoo = 2\n", {}, "run.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("foo") != std::string::npos);
        CHECK(msg.find("run.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("seed = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("", {"train.lr"}), ConfigError);
    CHECK_THROWS_AS(parse_config("/nonexistent/run.cfg"), ConfigError);

    const RunConfig round = parse_config_text(c.to_text());
    CHECK(round == c);
    CHECK(round.hash() == c.hash());
    CHECK(c.hash() != defaults.hash());
}

TEST_CASE("experiment registry") {
    const auto names = experiment_names();
    CHECK(names.size() == 10);
    Lab lab{RunConfig{}};
    try {
        run_experiment("no_such_experiment", lab, std::filesystem::temp_directory_path());
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        for (const auto& n : names) CHECK(msg.find(n) != std::string::npos);
    }
}

TEST_CASE("missing artifacts are named") {
    RunConfig c;
    c.set("models.map", "/nonexistent/map.uqad");
    Lab lab(c);
    try {
        lab.map_model();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("/nonexistent/map.uqad") != std::string::npos);
    }
}
