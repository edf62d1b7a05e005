#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "uqadv/uncertainty.hpp"

using namespace uqadv;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

Big big_entropy(std::initializer_list<Big> p) {
    Big h = 0;
    for (const Big& v : p)
        if (v > 0) h -= v * boost::multiprecision::log(v);
    return h;
}

PredictiveDistribution two_members(Eigen::Vector2d a, Eigen::Vector2d b) {
    PredictiveDistribution pd;
    pd.member_probs.resize(2, 2);
    pd.member_probs.row(0) = a.transpose();
    pd.member_probs.row(1) = b.transpose();
    pd.mean_probs = 0.5 * (a + b);
    return pd;
}

}  // namespace

TEST_CASE("entropy values") {
    CHECK(entropy(Eigen::Vector3d(0.0, 1.0, 0.0)) == 0.0);
    CHECK(entropy(Eigen::Vector2d(0.5, 0.5)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double oracle = static_cast<double>(big_entropy({Big("0.1"), Big("0.9")}));
    CHECK(std::abs(entropy(Eigen::Vector2d(0.1, 0.9)) - oracle) <= 1e-15);
    CHECK(std::abs(oracle - 0.325083) < 5e-7);
}

TEST_CASE("mutual information examples") {
    SUBCASE("identical members") {
        const auto r = mutual_information(two_members({0.3, 0.7}, {0.3, 0.7}));
        CHECK(r.mutual_information == 0.0);
    }
    SUBCASE("maximal disagreement") {
        const auto r = mutual_information(two_members({1.0, 0.0}, {0.0, 1.0}));
        CHECK(r.predictive_entropy == doctest::Approx(std::log(2.0)));
        CHECK(r.expected_entropy == 0.0);
        CHECK(r.mutual_information == doctest::Approx(std::log(2.0)));
    }
    SUBCASE("high-precision oracle") {
        const auto r = mutual_information(two_members({0.2, 0.8}, {1.0, 0.0}));
        const Big oracle = big_entropy({Big("0.6"), Big("0.4")}) - Big("0.5") * big_entropy({Big("0.2"), Big("0.8")});
        CHECK(std::abs(r.mutual_information - static_cast<double>(oracle)) <= 1e-15);
        CHECK(std::abs(static_cast<double>(oracle) - 0.422810) < 5e-7);
        CHECK(r.mutual_information == r.predictive_entropy - r.expected_entropy);
    }
    SUBCASE("single member is zero") {
        PredictiveDistribution pd;
        pd.member_probs = RowMatrix(1, 3);
        pd.member_probs << 0.2, 0.3, 0.5;
        pd.mean_probs = pd.member_probs.row(0).transpose();
        CHECK(mutual_information(pd).mutual_information == 0.0);
    }
}

TEST_CASE("mutual information bounds over random distributions") {
    Rng rng(8);
    std::gamma_distribution<double> g(0.5, 1.0);
    std::uniform_int_distribution<int> km(2, 6);
    double worst = 0.0;
    for (int t = 0; t < 100000; ++t) {
        const int k = km(rng), m = km(rng);
        PredictiveDistribution pd;
        pd.member_probs.resize(m, k);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < k; ++j) pd.member_probs(i, j) = g(rng) + 1e-300;
            pd.member_probs.row(i) /= pd.member_probs.row(i).sum();
        }
        pd.mean_probs = pd.member_probs.colwise().mean().transpose();
        const auto r = mutual_information(pd);
        worst = std::max({worst, -r.mutual_information, r.mutual_information - r.predictive_entropy,
                          r.predictive_entropy - std::log(static_cast<double>(k))});
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("mutual information is permutation invariant") {
    PredictiveDistribution pd;
    pd.member_probs.resize(3, 3);
    pd.member_probs << 0.1, 0.2, 0.7, 0.5, 0.4, 0.1, 0.3, 0.3, 0.4;
    const Eigen::Vector3d w(0.2, 0.3, 0.5);
    pd.mean_probs = pd.member_probs.transpose() * w;
    const double base = mutual_information(pd, w).mutual_information;

    PredictiveDistribution members = pd;
    members.member_probs.row(0) = pd.member_probs.row(2);
    members.member_probs.row(2) = pd.member_probs.row(0);
    CHECK(mutual_information(members, Eigen::Vector3d(0.5, 0.3, 0.2)).mutual_information ==
          doctest::Approx(base).epsilon(1e-14));

    PredictiveDistribution classes = pd;
    classes.member_probs.col(0) = pd.member_probs.col(1);
    classes.member_probs.col(1) = pd.member_probs.col(0);
    classes.mean_probs = classes.member_probs.transpose() * w;
    CHECK(mutual_information(classes, w).mutual_information == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("high-confidence threshold") {
    CHECK(std::abs(high_confidence_threshold(0.1) - 0.325083) < 5e-7);
    const double o25 = static_cast<double>(big_entropy({Big("0.25"), Big("0.75")}));
    CHECK(std::abs(high_confidence_threshold(0.25) - o25) <= 1e-15);
    CHECK(std::abs(o25 - 0.562335) < 5e-7);
    CHECK(high_confidence_threshold(0.5 - 1e-9) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS(high_confidence_threshold(0.0));
    CHECK_THROWS(high_confidence_threshold(0.5));
    CHECK_THROWS(high_confidence_threshold(-0.1));
    CHECK(std::string(kEntropyUnit) == "nats");
}
