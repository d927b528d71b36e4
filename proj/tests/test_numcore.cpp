#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ircan/errors.hpp"
#include "ircan/graph.hpp"
#include "support.hpp"

using namespace ircan;
using ircan::testing::grad_rel_error;
using ircan::testing::random_tensor;

TEST_CASE("matmul examples") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), a) == a);
    CHECK(matmul(a, Tensor::matrix({{0, 0}, {0, 0}})) == Tensor::matrix({{0, 0}, {0, 0}}));
    CHECK(matmul(a, Tensor::matrix({{5, 6}, {7, 8}})) == Tensor::matrix({{19, 22}, {43, 50}}));
    CHECK_THROWS_AS(matmul(a, Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST_CASE("softmax examples") {
    const Tensor u = softmax(Tensor::vector({1, 1, 1}));
    for (double v : u.raw()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
    const Tensor p = softmax(Tensor::vector({0, std::log(2.0)}));
    CHECK(std::abs(p[0] - 1.0 / 3) < 1e-15);
    CHECK(std::abs(p[1] - 2.0 / 3) < 1e-15);
    CHECK_THROWS_AS(softmax(Tensor(Shape{0})), DimensionError);
}

TEST_CASE("softmax sums to one and is shift invariant") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        Tensor x = random_tensor({n}, rng, 5.0);
        const Tensor p = softmax(x);
        double s = 0;
        for (double v : p.raw()) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
        const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
        Tensor shifted = x;
        for (auto& v : shifted.raw()) v += c;
        CHECK(max_abs_diff(softmax(shifted), p) < 1e-12);
    }
}

TEST_CASE("non-finite values are rejected") {
    Graph g;
    Var x = g.leaf(Tensor::vector({-1.0}));
    CHECK_THROWS_AS(log(x), NumericError);
    CHECK_THROWS_AS(g.leaf(Tensor::vector({std::nan("")})), NumericError);
}

TEST_CASE("backward analytic cases") {
    Graph g;
    Var x = g.leaf(Tensor::vector({1, 2, 3}));
    Var other = g.leaf(Tensor::vector({5}));
    Var root = sum(mul(x, x));
    auto grads = g.backward(root, std::vector<Var>{x, other});
    CHECK(grads[0] == Tensor::vector({2, 4, 6}));
    CHECK(grads[1] == Tensor::vector({0}));
}

TEST_CASE("backward rejects foreign and non-leaf handles") {
    Graph g, h;
    Var x = g.leaf(Tensor::vector({1, 2}));
    Var y = scale(x, 2.0);
    Var root = sum(y);
    Var foreign = h.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(root, y), UnknownLeafError);
    CHECK_THROWS_AS(g.backward(root, foreign), UnknownLeafError);
    CHECK_THROWS_AS(g.backward(y, x), DimensionError);
}

TEST_CASE("backward visits each reachable node once") {
    Graph g;
    Var x = g.leaf(Tensor::vector({1, 2}));
    Var a = scale(x, 2.0);
    Var b = add(a, a);  // diamond
    Var root = sum(b);
    CHECK(g.backward(root, x) == Tensor::vector({4, 4}));
    CHECK(g.last_backward_visits() == 4);
}

TEST_CASE("finite difference examples") {
    auto sq = [](const Tensor& t) { return t[0] * t[0]; };
    CHECK(std::abs(finite_difference(sq, Tensor::vector({3}), 1e-5)[0] - 6.0) < 1e-8);
    const Tensor z = finite_difference([](const Tensor&) { return 4.0; }, Tensor::vector({1, 2, 3}), 1e-5);
    CHECK(z == Tensor::vector({0, 0, 0}));
    CHECK_THROWS_AS(finite_difference(sq, Tensor::vector({1}), 0.0), NumericError);
    CHECK_THROWS_AS(finite_difference([](const Tensor&) { return INFINITY; }, Tensor::vector({1}), 1e-5),
                    NumericError);
}

TEST_CASE("finite difference matches the analytic softmax Jacobian") {
    const Tensor x = Tensor::vector({0.3, -1.2, 2.0, 0.1});
    const Tensor p = softmax(x);
    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor row = finite_difference([&](const Tensor& t) { return softmax(t)[i]; }, x, 1e-5);
        for (std::size_t j = 0; j < 4; ++j) {
            const double analytic = p[i] * ((i == j ? 1.0 : 0.0) - p[j]);
            CHECK(std::abs(row[j] - analytic) < 1e-6);
        }
    }
}

TEST_CASE("gradients match central differences on random networks") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto errs = ircan::testing::random_net_gradient_errors(seed);
        for (std::size_t k = 0; k < errs.size(); ++k) CHECK_MESSAGE(errs[k] < 1e-5, "seed " << seed << " param " << k);
    }
}

TEST_CASE("override_row leaf receives the gradient of the overridden entries") {
    std::mt19937_64 rng(5);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor w = random_tensor({4, 2}, rng);
    const std::vector<int> cols{1, 3};
    const Tensor vals = Tensor::vector({0.5, -0.25});
    auto f = [&](const Tensor& v) {
        Graph g;
        Var o = override_row(g.constant(a), 2, cols, g.constant(v));
        return sum(exp(matmul(o, g.constant(w)))).value().item();
    };
    Graph g;
    Var leaf = g.leaf(vals);
    Var root = sum(exp(matmul(override_row(g.constant(a), 2, cols, leaf), g.constant(w))));
    CHECK(grad_rel_error(g.backward(root, leaf), finite_difference(f, vals, 1e-5)) < 1e-8);
}

TEST_CASE("rotary backward matches central differences") {
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({5, 6}, rng);
    const Tensor w = random_tensor({6, 3}, rng);
    auto f = [&](const Tensor& v) {
        Graph g;
        return sum(gelu(matmul(rotary(g.constant(v), 10000.0), g.constant(w)))).value().item();
    };
    Graph g;
    Var leaf = g.leaf(x);
    Var root = sum(gelu(matmul(rotary(leaf, 10000.0), g.constant(w))));
    CHECK(grad_rel_error(g.backward(root, leaf), finite_difference(f, x, 1e-5)) < 1e-8);
}

TEST_CASE("forward is deterministic") {
    std::mt19937_64 rng(3);
    const Tensor a = random_tensor({4, 4}, rng), b = random_tensor({4, 4}, rng);
    CHECK(softmax(matmul(a, b).reshaped({16})) == softmax(matmul(a, b).reshaped({16})));
}
