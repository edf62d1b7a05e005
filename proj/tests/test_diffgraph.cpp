#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "uqadv/diffgraph.hpp"
#include "uqadv/netmodel.hpp"

using namespace uqadv;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

Graph square_sum() {
    GraphBuilder b;
    const NodeId x = b.input("x");
    return std::move(b).build(b.sum(b.mul(x, x)));
}

Eigen::VectorXd uniform(Index n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

// affine -> sine -> affine -> relu -> affine -> l2norm -> sum
struct ThreeLayer {
    Index d = 4, h1 = 5, h2 = 3, k = 2, n = 3;
    Graph graph;
    Tensor x, params;

    explicit ThreeLayer(std::uint64_t seed) {
        Rng rng(seed);
        GraphBuilder b;
        const NodeId xi = b.input("x");
        const NodeId p = b.input("params");
        Index off = 0;
        NodeId a = b.sine(b.affine(xi, p, off, d, h1));
        off += h1 * d + h1;
        a = b.relu(b.affine(a, p, off, h1, h2));
        off += h2 * h1 + h2;
        a = b.affine(a, p, off, h2, k);
        off += k * h2 + k;
        graph = std::move(b).build(b.sum(b.l2norm(a)));
        x = Tensor({n, d}, uniform(n * d, rng));
        params = Tensor::vector(uniform(off, rng));
    }
};

std::vector<Big> big_affine(const std::vector<Big>& in, const Eigen::VectorXd& p, Index off, Index in_dim,
                            Index out_dim) {
    std::vector<Big> out(static_cast<std::size_t>(out_dim));
    for (Index o = 0; o < out_dim; ++o) {
        Big s = Big(p[off + in_dim * out_dim + o]);
        for (Index i = 0; i < in_dim; ++i) s += Big(p[off + o * in_dim + i]) * in[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = s;
    }
    return out;
}

Big big_three_layer(const ThreeLayer& t) {
    const Eigen::VectorXd& p = t.params.values();
    const auto xm = t.x.as_matrix();
    Big total = 0;
    for (Index r = 0; r < t.n; ++r) {
        std::vector<Big> a(static_cast<std::size_t>(t.d));
        for (Index i = 0; i < t.d; ++i) a[static_cast<std::size_t>(i)] = Big(xm(r, i));
        Index off = 0;
        a = big_affine(a, p, off, t.d, t.h1);
        for (auto& v : a) v = boost::multiprecision::sin(v);
        off += t.h1 * t.d + t.h1;
        a = big_affine(a, p, off, t.h1, t.h2);
        for (auto& v : a) v = v > 0 ? v : Big(0);
        off += t.h2 * t.h1 + t.h2;
        a = big_affine(a, p, off, t.h2, t.k);
        Big ss = 0;
        for (auto& v : a) ss += v * v;
        total += boost::multiprecision::sqrt(ss);
    }
    return total;
}

}  // namespace

TEST_CASE("identity and closed-form forward values") {
    GraphBuilder b;
    const NodeId x = b.input("x");
    const NodeId z = b.constant(Tensor::vector(Eigen::Vector2d(0.0, 0.0)));
    const Graph g = std::move(b).build(b.add(x, z));
    const Tensor xv = Tensor::vector(Eigen::Vector2d(1.0, 2.0));
    const Tensor y = eval_forward(g, Inputs().bind("x", xv));
    CHECK(y.values() == Eigen::Vector2d(1.0, 2.0));

    const Tensor x34 = Tensor::vector(Eigen::Vector2d(3.0, 4.0));
    CHECK(eval_forward(square_sum(), Inputs().bind("x", x34)).item() == 25.0);
    const Tensor g34 = grad(square_sum(), Inputs().bind("x", x34), "x");
    CHECK(g34.values() == Eigen::Vector2d(6.0, 8.0));
    CHECK(g34.shape() == x34.shape());
}

TEST_CASE("gradient of a constant graph is zero") {
    GraphBuilder b;
    b.input("x");
    const Graph g = std::move(b).build(b.sum(b.constant(Tensor::vector(Eigen::Vector3d(1, 2, 3)))));
    const Tensor x = Tensor::vector(Eigen::Vector2d(0.5, -0.5));
    const Tensor gx = grad(g, Inputs().bind("x", x), "x");
    CHECK(gx.values().isZero(0.0));
    CHECK(finite_diff_check(g, Inputs().bind("x", x), "x", 1e-5) == 0.0);
}

TEST_CASE("quadratic graph is exact under central differences") {
    Rng rng(3);
    const Tensor x = Tensor::vector(uniform(6, rng));
    CHECK(finite_diff_check(square_sum(), Inputs().bind("x", x), "x", 1e-5) <= 1e-8);
}

TEST_CASE("random three-layer graph matches a 50-digit re-evaluation") {
    const ThreeLayer t(7);
    const double v = eval_forward(t.graph, Inputs().bind("x", t.x).bind("params", t.params)).item();
    const Big oracle = big_three_layer(t);
    const double rel = static_cast<double>(boost::multiprecision::abs(Big(v) - oracle) / boost::multiprecision::abs(oracle));
    CHECK(rel < 1e-13);
}

TEST_CASE("random networks agree with central finite differences") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        NetworkSpec spec;
        spec.input_dim = 2 + static_cast<Index>(seed % 4);
        spec.hidden_sizes = {3 + static_cast<Index>(seed % 3)};
        if (seed % 2) spec.hidden_sizes.push_back(4);
        spec.activation = seed % 3 == 0 ? Activation::relu : Activation::sine;
        spec.num_classes = 2 + static_cast<Index>(seed % 2);
        // Random biases: zero-initialised ones sit relu units exactly on their kink.
        const ParamVector p = make_params(spec, 0.5 * standard_normal(spec.param_count(), rng));
        const Index n = 3;
        Eigen::VectorXd labels(n);
        for (Index i = 0; i < n; ++i) labels[i] = static_cast<double>(static_cast<Index>(seed + i) % spec.num_classes);
        const Tensor x({n, spec.input_dim}, uniform(n * spec.input_dim, rng));
        const Tensor pt = Tensor::vector(p.values);
        const Tensor lt = Tensor::vector(labels);
        const Graph g = build_loss_graph(spec, false, 1.0, 1e-3);
        Inputs in;
        in.bind("x", x).bind("params", pt).bind("labels", lt);
        CAPTURE(seed);
        CHECK(finite_diff_check(g, in, "params", 1e-5) <= 1e-4);
        CHECK(finite_diff_check(g, in, "x", 1e-5) <= 1e-4);
    }
}

TEST_CASE("sigmoid cross-entropy and l2norm gradients") {
    Rng rng(11);
    GraphBuilder b;
    const NodeId x = b.input("x");
    const NodeId t = b.input("t");
    const Graph g = std::move(b).build(b.add(b.sigmoid_xent(x, t), b.sum(b.l2norm(x))));
    const Tensor xv({2, 3}, uniform(6, rng, -3.0, 3.0));
    const Tensor tv({2, 3}, uniform(6, rng, 0.0, 1.0));
    CHECK(finite_diff_check(g, Inputs().bind("x", xv).bind("t", tv), "x", 1e-5) <= 1e-6);
}

TEST_CASE("gradient is linear in the loss") {
    Rng rng(5);
    const double a = 0.7, c = -1.3;
    GraphBuilder b;
    const NodeId x = b.input("x");
    const NodeId f = b.sum(b.sine(x));
    const NodeId h = b.sum(b.mul(x, b.relu(x)));
    const NodeId ca = b.constant(Tensor::scalar(a));
    const NodeId cc = b.constant(Tensor::scalar(c));
    const Graph combo = std::move(b).build(b.add(b.mul(ca, f), b.mul(cc, h)));

    GraphBuilder bf;
    const NodeId xf = bf.input("x");
    const Graph gf = std::move(bf).build(bf.sum(bf.sine(xf)));
    GraphBuilder bh;
    const NodeId xh = bh.input("x");
    const Graph gh = std::move(bh).build(bh.sum(bh.mul(xh, bh.relu(xh))));

    for (int rep = 0; rep < 20; ++rep) {
        const Tensor xv = Tensor::vector(uniform(5, rng, -2.0, 2.0));
        const Eigen::VectorXd lhs = grad(combo, Inputs().bind("x", xv), "x").values();
        const Eigen::VectorXd rhs =
            a * grad(gf, Inputs().bind("x", xv), "x").values() + c * grad(gh, Inputs().bind("x", xv), "x").values();
        CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-10);
    }
}

TEST_CASE("evaluation is bitwise deterministic") {
    const ThreeLayer t(7);
    Inputs in;
    in.bind("x", t.x).bind("params", t.params);
    const ValueAndGrad a = value_and_grad(t.graph, in, "params");
    const ValueAndGrad b = value_and_grad(t.graph, in, "params");
    CHECK(a.value == b.value);
    CHECK(a.gradient == b.gradient);
}

TEST_CASE("graph errors") {
    SUBCASE("unbound input") {
        CHECK_THROWS_AS(eval_forward(square_sum(), Inputs()), GraphError);
    }
    SUBCASE("shape mismatch names the node") {
        GraphBuilder b;
        const NodeId x = b.input("x");
        const NodeId y = b.input("y");
        const Graph g = std::move(b).build(b.sum(b.add(x, y)));
        const Tensor xv = Tensor::vector(Eigen::Vector2d(1, 2));
        const Tensor yv = Tensor::vector(Eigen::Vector3d(1, 2, 3));
        try {
            eval_forward(g, Inputs().bind("x", xv).bind("y", yv));
            FAIL("expected GraphError");
        } catch (const GraphError& e) {
            CHECK(std::string(e.what()).find("add") != std::string::npos);
        }
    }
    SUBCASE("non-finite values are rejected") {
        const Tensor xv = Tensor::vector(Eigen::Vector2d(std::numeric_limits<double>::infinity(), 1.0));
        CHECK_THROWS_AS(eval_forward(square_sum(), Inputs().bind("x", xv)), GraphError);
    }
    SUBCASE("non-scalar output cannot be differentiated") {
        GraphBuilder b;
        const NodeId x = b.input("x");
        const Graph g = std::move(b).build(b.sine(x));
        const Tensor xv = Tensor::vector(Eigen::Vector2d(1, 2));
        CHECK_THROWS_AS(grad(g, Inputs().bind("x", xv), "x"), GraphError);
    }
    SUBCASE("tensor shape must match its values") {
        CHECK_THROWS(Tensor({2, 2}, Eigen::VectorXd::Zero(3)));
    }
}
