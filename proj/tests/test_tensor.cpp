#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pdectrl/grid.hpp"
#include "pdectrl/tensor.hpp"

using namespace pdectrl;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("elementwise basics") {
    Tape t;
    Tensor a = t.leaf({2}, {1.0, 2.0}, false);
    Tensor b = t.leaf({2}, {3.0, 4.0}, false);
    Tensor c = add(a, b);
    CHECK(c.value()[0] == 4.0);
    CHECK(c.value()[1] == 6.0);

    Tensor z = t.leaf({3}, {0.0, 0.0, 0.0}, false);
    Tensor th = tanh(z);
    for (double v : th.value()) CHECK(v == 0.0);

    Tensor s = t.scalar_leaf(2.0);
    Tensor m = mul(a, s);
    CHECK(m.value()[0] == 2.0);
    CHECK(m.value()[1] == 4.0);

    CHECK_THROWS_AS(add(a, t.leaf({3}, {1, 2, 3}, false)), std::invalid_argument);
}

TEST_CASE("square derivative is 2x") {
    Tape t;
    Tensor x = t.leaf({3}, {1.0, 2.0, 3.0}, true);
    Tensor loss = sum(square(x));
    t.backward(loss);
    auto g = x.grad();
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
    CHECK(g[2] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum is all ones") {
    Tape t;
    Tensor x = t.leaf({2, 3}, random_vec(6, 1), true);
    t.backward(sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Tensor x = t.leaf({2}, {1.0, 2.0}, true);
    Tensor y = square(x);
    CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("half squared distance gradient is x - y") {
    Tape t;
    auto xv = random_vec(5, 2), yv = random_vec(5, 3);
    Tensor x = t.leaf({5}, xv, true);
    Tensor y = t.leaf({5}, yv, false);
    Tensor loss = scale(square(l2norm(sub(x, y))), 0.5);
    t.backward(loss);
    auto g = x.grad();
    for (size_t i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(xv[i] - yv[i]).epsilon(1e-12));
}

TEST_CASE("l2norm value and gradient") {
    Tape t;
    Tensor x = t.leaf({2}, {3.0, 4.0}, true);
    Tensor n = l2norm(x);
    CHECK(n.scalar() == doctest::Approx(5.0));
    t.backward(n);
    CHECK(x.grad()[0] == doctest::Approx(0.6));
    CHECK(x.grad()[1] == doctest::Approx(0.8));

    // subgradient at the origin is defined as zero
    Tape t2;
    Tensor z = t2.leaf({2}, {0.0, 0.0}, true);
    Tensor loss = l2norm(z);
    t2.backward(loss);
    CHECK(z.grad()[0] == 0.0);
    CHECK(z.grad()[1] == 0.0);
}

TEST_CASE("mean of constant tensor") {
    Tape t;
    Tensor x = t.leaf({4}, {2.5, 2.5, 2.5, 2.5}, false);
    CHECK(mean(x).scalar() == doctest::Approx(2.5));
}

TEST_CASE("conv2d identity kernel preserves input") {
    Tape t;
    auto inv = random_vec(25, 4);
    Tensor in = t.leaf({1, 5, 5}, inv, false);
    std::vector<double> kv(9, 0.0);
    kv[4] = 1.0;
    Tensor k = t.leaf({1, 1, 3, 3}, kv, false);
    Tensor out = conv2d(in, k, std::nullopt, 1, 1);
    REQUIRE(out.shape() == std::vector<int>{1, 5, 5});
    for (size_t i = 0; i < 25; ++i) CHECK(out.value()[i] == doctest::Approx(inv[i]));
}

TEST_CASE("conv2d laplacian stencil is exact on x^2+y^2") {
    const int n = 9;
    const double h = 1.0 / (n - 1);
    std::vector<double> f(n * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double xv = x * h, yv = y * h;
            f[y * n + x] = xv * xv + yv * yv;
        }
    Tape t;
    Tensor in = t.leaf({1, n, n}, f, false);
    const double s = 1.0 / (h * h);
    Tensor k = t.leaf({1, 1, 3, 3}, {0, s, 0, s, -4 * s, s, 0, s, 0}, false);
    Tensor out = conv2d(in, k, std::nullopt, 1, 1);
    for (int y = 1; y < n - 1; ++y)
        for (int x = 1; x < n - 1; ++x)
            CHECK(out.value()[y * n + x] == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("conv2d gradient matches finite differences") {
    const std::vector<int> shape{1, 8, 8};
    auto x0 = random_vec(64, 5);
    auto kv = random_vec(2 * 1 * 3 * 3, 6);
    auto f = [&](Tape& t, Tensor x) {
        Tensor k = t.leaf({2, 1, 3, 3}, kv, false);
        return sum(conv2d(x, k, std::nullopt, 1, 1));
    };
    CHECK(grad_check(f, shape, x0, 1e-5) <= 1e-6);
}

TEST_CASE("conv2d kernel and bias gradients via finite differences") {
    auto inv = random_vec(2 * 6 * 6, 7);
    const std::vector<int> kshape{3, 2, 3, 3};
    auto k0 = random_vec(3 * 2 * 3 * 3, 8);
    auto f = [&](Tape& t, Tensor k) {
        Tensor in = t.leaf({2, 6, 6}, inv, false);
        return sum(square(conv2d(in, k, std::nullopt, 2, 1)));
    };
    CHECK(grad_check(f, kshape, k0, 1e-5) <= 1e-6);

    auto b0 = random_vec(3, 9);
    auto fb = [&](Tape& t, Tensor b) {
        Tensor in = t.leaf({2, 6, 6}, inv, false);
        Tensor k = t.leaf(kshape, k0, false);
        return sum(square(conv2d(in, k, b, 1, 1)));
    };
    CHECK(grad_check(fb, {3}, b0, 1e-5) <= 1e-6);
}

TEST_CASE("conv2d rejects bad geometry") {
    Tape t;
    Tensor in = t.leaf({1, 2, 2}, random_vec(4, 10), false);
    Tensor k = t.leaf({1, 1, 5, 5}, random_vec(25, 11), false);
    CHECK_THROWS_AS(conv2d(in, k, std::nullopt, 1, 0), std::invalid_argument);

    Tensor k_even = t.leaf({1, 1, 2, 2}, random_vec(4, 12), false);
    CHECK_THROWS_AS(conv2d(in, k_even, std::nullopt, 1, 1), std::invalid_argument);
}

TEST_CASE("conv1d identity and second-difference stencil") {
    Tape t;
    auto inv = random_vec(10, 13);
    Tensor in = t.leaf({1, 10}, inv, false);
    Tensor k = t.leaf({1, 1, 3}, {0.0, 1.0, 0.0}, false);
    Tensor out = conv1d(in, k, std::nullopt, 1, 1);
    for (size_t i = 0; i < 10; ++i) CHECK(out.value()[i] == doctest::Approx(inv[i]));

    // k = [1,-2,1]/h^2 on samples of x^2 gives 2 on the interior
    const int n = 11;
    const double h = 1.0 / (n - 1);
    std::vector<double> sq(n);
    for (int i = 0; i < n; ++i) sq[i] = (i * h) * (i * h);
    Tensor x2 = t.leaf({1, n}, sq, false);
    const double s = 1.0 / (h * h);
    Tensor kd = t.leaf({1, 1, 3}, {s, -2 * s, s}, false);
    Tensor d2 = conv1d(x2, kd, std::nullopt, 1, 1);
    for (int i = 1; i < n - 1; ++i) CHECK(d2.value()[i] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("conv1d gradient matches finite differences") {
    const std::vector<int> shape{2, 12};
    auto x0 = random_vec(24, 14);
    auto kv = random_vec(3 * 2 * 5, 15);
    auto f = [&](Tape& t, Tensor x) {
        Tensor k = t.leaf({3, 2, 5}, kv, false);
        return sum(square(conv1d(x, k, std::nullopt, 2, 2)));
    };
    CHECK(grad_check(f, shape, x0, 1e-5) <= 1e-6);
}

TEST_CASE("upsample2x duplicates and sums gradients") {
    Tape t;
    Tensor in = t.leaf({1, 2, 2}, {1, 2, 3, 4}, true);
    Tensor up = upsample2x(in);
    REQUIRE(up.shape() == std::vector<int>{1, 4, 4});
    const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (size_t i = 0; i < 16; ++i) CHECK(up.value()[i] == expect[i]);
    t.backward(sum(up));
    for (double g : in.grad()) CHECK(g == 4.0);  // four duplicates per source cell

    Tape t2;
    Tensor c = t2.leaf({1, 3, 3}, std::vector<double>(9, 7.0), false);
    Tensor upc = upsample2x(c);
    for (double v : upc.value()) CHECK(v == 7.0);

    Tape t3;
    Tensor one_d = t3.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor up1 = upsample2x(one_d);
    REQUIRE(up1.shape() == std::vector<int>{2, 6});
    t3.backward(sum(up1));
    for (double g : one_d.grad()) CHECK(g == 2.0);
}

TEST_CASE("linear layer identity and gradients") {
    Tape t;
    std::vector<double> wv(9, 0.0);
    wv[0] = wv[4] = wv[8] = 1.0;
    Tensor x = t.leaf({3}, {1, 2, 3}, false);
    Tensor w = t.leaf({3, 3}, wv, false);
    Tensor b = t.leaf({3}, {0, 0, 0}, false);
    Tensor y = linear(x, w, b);
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[1] == 2.0);
    CHECK(y.value()[2] == 3.0);

    Tape t2;
    Tensor ones_w = t2.leaf({1, 4}, {1, 1, 1, 1}, false);
    Tensor xin = t2.leaf({4}, {1, 1, 1, 1}, false);
    Tensor zb = t2.leaf({1}, {0.0}, false);
    CHECK(linear(xin, ones_w, zb).value()[0] == 4.0);

    auto x0 = random_vec(6, 16);
    auto wv2 = random_vec(12, 17);
    auto bv = random_vec(2, 18);
    auto fx = [&](Tape& tt, Tensor xx) {
        Tensor ww = tt.leaf({2, 6}, wv2, false);
        Tensor bb = tt.leaf({2}, bv, false);
        return sum(square(linear(xx, ww, bb)));
    };
    CHECK(grad_check(fx, {6}, x0, 1e-5) <= 1e-6);
    auto fw = [&](Tape& tt, Tensor ww) {
        Tensor xx = tt.leaf({6}, x0, false);
        Tensor bb = tt.leaf({2}, bv, false);
        return sum(square(linear(xx, ww, bb)));
    };
    CHECK(grad_check(fw, {2, 6}, wv2, 1e-5) <= 1e-6);
}

TEST_CASE("grad_check on linear f is exact") {
    auto x0 = random_vec(10, 19);
    auto f = [](Tape&, Tensor x) { return sum(x); };
    CHECK(grad_check(f, {10}, x0, 1e-5) <= 1e-10);
}

TEST_CASE("grad_check on squared l2 norm") {
    auto x0 = random_vec(12, 20);
    auto f = [](Tape&, Tensor x) { return square(l2norm(x)); };
    CHECK(grad_check(f, {12}, x0, 1e-5) <= 1e-6);
}

TEST_CASE("two-layer conv net gradient vs finite differences") {
    // composite: conv -> tanh -> conv -> square -> sum, checked w.r.t. input
    auto k1 = random_vec(2 * 1 * 3 * 3, 21);
    auto k2 = random_vec(1 * 2 * 3 * 3, 22);
    auto b1 = random_vec(2, 23);
    auto b2 = random_vec(1, 24);
    auto x0 = random_vec(64, 25);
    auto f = [&](Tape& t, Tensor x) {
        Tensor w1 = t.leaf({2, 1, 3, 3}, k1, false);
        Tensor bb1 = t.leaf({2}, b1, false);
        Tensor w2 = t.leaf({1, 2, 3, 3}, k2, false);
        Tensor bb2 = t.leaf({1}, b2, false);
        Tensor h = tanh(conv2d(x, w1, bb1, 1, 1));
        Tensor y = conv2d(h, w2, bb2, 1, 1);
        return sum(square(y));
    };
    CHECK(grad_check(f, {1, 8, 8}, x0, 1e-5) <= 1e-5);
}

TEST_CASE("all elementwise ops pass grad_check") {
    auto x0 = random_vec(16, 26);
    auto yv = random_vec(16, 27, 0.5, 1.5);
    auto fs = std::vector<std::function<Tensor(Tape&, Tensor)>>{
        [&](Tape& t, Tensor x) { return sum(add(x, t.leaf({16}, yv, false))); },
        [&](Tape& t, Tensor x) { return sum(sub(t.leaf({16}, yv, false), x)); },
        [&](Tape& t, Tensor x) { return sum(mul(x, t.leaf({16}, yv, false))); },
        [&](Tape& t, Tensor x) { return sum(div(x, t.leaf({16}, yv, false))); },
        [&](Tape& t, Tensor x) { return sum(div(t.leaf({16}, yv, false), x)); },
        [&](Tape&, Tensor x) { return sum(tanh(x)); },
        [&](Tape&, Tensor x) { return sum(square(x)); },
        [&](Tape&, Tensor x) { return scale(sum(x), -2.5); },
        [&](Tape&, Tensor x) { return mean(square(x)); },
    };
    // shift x away from 0 so div and relu kinks are avoided
    for (double& v : x0) v += v >= 0 ? 0.5 : -0.5;
    for (const auto& f : fs) CHECK(grad_check(f, {16}, x0, 1e-5) <= 1e-5);

    auto frelu = [](Tape&, Tensor x) { return sum(square(relu(x))); };
    CHECK(grad_check(frelu, {16}, x0, 1e-6) <= 1e-5);
}

TEST_CASE("backward is deterministic across rebuilt tapes") {
    auto x0 = random_vec(32, 28);
    auto kv = random_vec(2 * 1 * 3 * 3, 29);
    auto run = [&]() {
        Tape t;
        Tensor x = t.leaf({1, 4, 8}, x0, true);
        Tensor k = t.leaf({2, 1, 3, 3}, kv, true);
        Tensor y = sum(square(tanh(conv2d(x, k, std::nullopt, 1, 1))));
        t.backward(y);
        std::vector<double> g(x.grad().begin(), x.grad().end());
        g.insert(g.end(), k.grad().begin(), k.grad().end());
        return g;
    };
    auto g1 = run(), g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);  // bitwise
}

TEST_CASE("backward is linear in the loss") {
    auto x0 = random_vec(20, 30);
    const double a = 2.0, b = -3.0;
    auto grads = [&](double ca, double cb) {
        Tape t;
        Tensor x = t.leaf({20}, x0, true);
        Tensor f = sum(square(x));
        Tensor g = sum(mul(x, tanh(x)));
        Tensor loss = add(scale(f, ca), scale(g, cb));
        t.backward(loss);
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    auto gf = grads(1.0, 0.0), gg = grads(0.0, 1.0), gab = grads(a, b);
    for (size_t i = 0; i < 20; ++i)
        CHECK(std::abs(gab[i] - (a * gf[i] + b * gg[i])) <= 1e-12);
}

TEST_CASE("frozen leaves receive no gradient buffers") {
    Tape t;
    Tensor x = t.leaf({4}, {1, 2, 3, 4}, true);
    Tensor w = t.leaf({4}, {1, 1, 1, 1}, false);
    t.backward(sum(mul(x, w)));
    CHECK_THROWS(w.grad());
    CHECK(x.grad()[0] == 1.0);
}
