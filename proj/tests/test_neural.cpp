#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "totkit/errors.hpp"
#include "totkit/neural.hpp"

using namespace totkit;
using namespace totkit::neural;

TEST_CASE("fc_forward closed forms") {
    SUBCASE("zero weights, tanh: zero output") {
        FcParams p(3, 4, Activation::kTanh);
        const Vec y = fc_forward(p, Vec{1.0, -2.0, 0.5, 3.0});
        for (double v : y) CHECK(v == 0.0);
    }
    SUBCASE("identity weights: passthrough") {
        FcParams p(3, 3, Activation::kIdentity);
        for (std::size_t i = 0; i < 3; ++i) p.w(i, i) = 1.0;
        const Vec x{0.25, -1.5, 2.0};
        CHECK(fc_forward(p, x) == x);
    }
    SUBCASE("zero weights, softplus: ln 2 everywhere") {
        FcParams p(5, 2, Activation::kSoftplus);
        const Vec y = fc_forward(p, Vec{7.0, -7.0});
        for (double v : y) {
            CHECK(v == softplus(0.0));
            CHECK(std::abs(v - std::log(2.0)) < 1e-15);
        }
    }
    SUBCASE("shape mismatch throws") {
        FcParams p(3, 4, Activation::kTanh);
        CHECK_THROWS_AS(fc_forward(p, Vec{1.0, 2.0}), ShapeError);
    }
}

TEST_CASE("fc_backward matches the hand chain rule for an L1 head") {
    // Single identity FC, one output, L = |o - t|  =>  dW = sign(o-t) * x.
    FcParams p(1, 3, Activation::kIdentity);
    p.w(0, 0) = 0.5;
    p.w(0, 1) = -1.0;
    p.w(0, 2) = 2.0;
    p.b[0] = 0.25;
    const Vec x{1.0, 2.0, -0.5};
    const Vec y = fc_forward(p, x);
    const double target = y[0] - 3.0;  // output above target -> sign +1
    FcGrads grads(p);
    grads.zero();
    const double sign = y[0] > target ? 1.0 : -1.0;
    const Vec dx = fc_backward(p, x, y, Vec{sign}, grads);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(grads.w(0, c) == sign * x[c]);
        CHECK(dx[c] == sign * p.w(0, c));
    }
    CHECK(grads.b[0] == sign);
}

TEST_CASE("lstm_step closed forms") {
    const std::size_t H = 4, D = 3;
    LstmCellParams p(D, H);  // all zeros, including biases

    SUBCASE("all-zero parameters and state give zero output") {
        Vec h(H, 0.0), c(H, 0.0), h2, c2;
        lstm_step(p, Vec{1.0, -1.0, 0.5}, h, c, h2, c2);
        for (double v : h2) CHECK(v == 0.0);
        for (double v : c2) CHECK(v == 0.0);
    }
    SUBCASE("unit cell state decays through half-open gates") {
        Vec h(H, 0.0), c(H, 1.0), h2, c2;
        lstm_step(p, Vec{0.0, 0.0, 0.0}, h, c, h2, c2);
        for (double v : c2) CHECK(v == 0.5);  // sigmoid(0) * 1
        const double expected_h = 0.5 * std::tanh(0.5);
        for (double v : h2) {
            CHECK(v == expected_h);
            CHECK(v == doctest::Approx(0.231059).epsilon(1e-5));
        }
    }
    SUBCASE("wrong input dimension throws") {
        Vec h(H, 0.0), c(H, 0.0), h2, c2;
        CHECK_THROWS_AS(lstm_step(p, Vec{1.0}, h, c, h2, c2), ShapeError);
        Vec bad_c(H + 1, 0.0);
        CHECK_THROWS_AS(lstm_step(p, Vec{0.0, 0.0, 0.0}, h, bad_c, h2, c2), ShapeError);
    }
}

TEST_CASE("lstm initialization sets the forget-gate bias to one") {
    Rng rng(3);
    LstmCellParams p(5, 6);
    p.init(rng);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(p.b[k] == 0.0);           // input gate
        CHECK(p.b[6 + k] == 1.0);       // forget gate
        CHECK(p.b[12 + k] == 0.0);      // candidate
        CHECK(p.b[18 + k] == 0.0);      // output gate
    }
    const double bound = 1.0 / std::sqrt(5.0);
    for (double w : p.w_x.a) CHECK(std::abs(w) <= bound);
}

TEST_CASE("adam closed forms") {
    SUBCASE("zero gradient leaves parameters untouched") {
        Vec theta{0.7, -0.3};
        Vec grad{0.0, 0.0};
        std::vector<ParamView> params{{theta.data(), theta.size()}};
        std::vector<ParamView> grads{{grad.data(), grad.size()}};
        AdamState adam(params, {});
        adam.step(params, grads);
        CHECK(theta[0] == 0.7);
        CHECK(theta[1] == -0.3);
        CHECK(adam.steps_taken() == 1);
    }
    SUBCASE("first step with scalar gradient 0.3 moves by ~ -lr") {
        Vec theta{1.0};
        Vec grad{0.3};
        std::vector<ParamView> params{{theta.data(), 1}};
        std::vector<ParamView> grads{{grad.data(), 1}};
        AdamState adam(params, {});
        adam.step(params, grads);
        // m_hat = g, v_hat = g^2  =>  delta = -lr * g / (|g| + eps)
        const double expected = 1.0 - 0.001 * 0.3 / (0.3 + 1e-8);
        CHECK(theta[0] == doctest::Approx(expected).epsilon(1e-14));
        CHECK(std::abs((theta[0] - 1.0) + 0.001) < 1e-7);
    }
    SUBCASE("step counter increments by one per call") {
        Vec theta{1.0};
        Vec grad{0.1};
        std::vector<ParamView> params{{theta.data(), 1}};
        std::vector<ParamView> grads{{grad.data(), 1}};
        AdamState adam(params, {});
        for (std::size_t i = 1; i <= 5; ++i) {
            adam.step(params, grads);
            CHECK(adam.steps_taken() == i);
        }
    }
    SUBCASE("shape mismatch throws") {
        Vec theta{1.0, 2.0};
        Vec grad{0.1};
        std::vector<ParamView> params{{theta.data(), 2}};
        std::vector<ParamView> grads{{grad.data(), 1}};
        AdamState adam(params, {});
        CHECK_THROWS_AS(adam.step(params, grads), ShapeError);
    }
}

TEST_CASE("finite-difference checker validates a quadratic's analytic gradient") {
    Vec theta{0.3, -0.8, 1.2, 0.05};
    Vec grad(4);
    const auto loss = [&theta]() {
        double l = 0.0;
        for (double t : theta) l += t * t;
        return l;
    };
    for (std::size_t i = 0; i < 4; ++i) grad[i] = 2.0 * theta[i];
    std::vector<ParamView> params{{theta.data(), 4}};
    std::vector<ParamView> analytic{{grad.data(), 4}};
    Rng rng(5);
    CHECK(finite_diff_max_rel_error(params, analytic, loss, 1e-5, rng) < 1e-8);

    SUBCASE("a wrong gradient is caught") {
        grad[2] = 0.0;
        CHECK(finite_diff_max_rel_error(params, analytic, loss, 1e-5, rng) > 0.5);
    }
    SUBCASE("eps outside [1e-7, 1e-3] is rejected") {
        CHECK_THROWS_AS(finite_diff_max_rel_error(params, analytic, loss, 1.0, rng), ConfigError);
        CHECK_THROWS_AS(finite_diff_max_rel_error(params, analytic, loss, 1e-8, rng), ConfigError);
    }
}

TEST_CASE("rng is deterministic and fork streams are independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng f1 = Rng::fork(42, 1);
    Rng f2 = Rng::fork(42, 2);
    Rng f1b = Rng::fork(42, 1);
    CHECK(f1.next_u64() == f1b.next_u64());
    CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("rng uniform stays in range and normal has sane moments") {
    Rng rng(9);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("non-finite values are rejected at layer boundaries") {
    FcParams p(2, 2, Activation::kIdentity);
    p.w(0, 0) = 1e308;
    p.w(0, 1) = 1e308;
    CHECK_THROWS_AS(fc_forward(p, Vec{1e308, 1e308}), NumericError);
}
