#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pdg/autodiff.hpp"
#include "pdg/rng.hpp"
#include "pdg/scalar_ops.hpp"

using pdg::ad::Tape;
using pdg::ad::Var;

namespace {

// Central finite difference of a scalar function of one coordinate.
template <class F>
double fd(F&& f, std::vector<double> x, std::size_t k, double h = 1e-6) {
    auto xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    return (f(xp) - f(xm)) / (2.0 * h);
}

}  // namespace

TEST_CASE("constants fold without touching a tape") {
    const Var a = 2.0;
    const Var b = 3.5;
    const Var c = a * b + pdg::ad::exp(a);
    CHECK(c.tape == nullptr);
    CHECK(c.v == doctest::Approx(2.0 * 3.5 + std::exp(2.0)));
}

TEST_CASE("basic arithmetic gradients") {
    Tape tape;
    const Var x = tape.leaf(1.3);
    const Var y = tape.leaf(-0.7);
    const Var z = (x * y + x / y - y) * x;
    const auto adj = tape.gradient(z);

    // z = x^2 y + x^2 / y - x y
    const double dx = 2.0 * 1.3 * -0.7 + 2.0 * 1.3 / -0.7 - -0.7;
    const double dy = 1.3 * 1.3 - 1.3 * 1.3 / (0.7 * 0.7) - 1.3;
    CHECK(adj[0] == doctest::Approx(dx).epsilon(1e-12));
    CHECK(adj[1] == doctest::Approx(dy).epsilon(1e-12));
}

TEST_CASE("unary function gradients match finite differences") {
    pdg::Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const double x0 = rng.uniform(0.2, 2.5);
        auto f = [](const std::vector<double>& x) {
            return std::exp(x[0]) * std::log(x[0]) + std::sqrt(x[0]) +
                   pdg::softplus(x[0]) * pdg::relu(x[0] - 1.0) + std::pow(x[0], 2.7);
        };
        Tape tape;
        const Var x = tape.leaf(x0);
        const Var y = pdg::ad::exp(x) * pdg::ad::log(x) + pdg::ad::sqrt(x) +
                      pdg::ad::softplus(x) * pdg::ad::relu(x - 1.0) + pdg::ad::pow_const(x, 2.7);
        const auto adj = tape.gradient(y);
        CHECK(adj[0] == doctest::Approx(fd(f, {x0}, 0)).epsilon(1e-6));
    }
}

TEST_CASE("softplus is stable at extremes") {
    Tape tape;
    const Var big = tape.leaf(800.0);
    const Var small = tape.leaf(-800.0);
    CHECK(pdg::ad::softplus(big).v == doctest::Approx(800.0));
    CHECK(pdg::ad::softplus(small).v == doctest::Approx(0.0));
    CHECK(std::isfinite(pdg::ad::softplus(big).v));
}

TEST_CASE("relu subgradient is zero at and below the kink") {
    Tape tape;
    const Var x = tape.leaf(-2.0);
    const Var y = pdg::ad::relu(x);
    CHECK(y.v == 0.0);
    CHECK(tape.gradient(y)[0] == 0.0);
}

TEST_CASE("nodes not on the output path get zero gradient") {
    Tape tape;
    const Var x = tape.leaf(1.0);
    const Var unused = tape.leaf(5.0);
    const Var z = x * x;
    const auto adj = tape.gradient(z);
    CHECK(adj[0] == doctest::Approx(2.0));
    CHECK(adj[1] == 0.0);
    (void)unused;
}

TEST_CASE("detach cuts the graph") {
    Tape tape;
    const Var x = tape.leaf(2.0);
    const Var z = pdg::ad::detach(x * x) * x;
    const auto adj = tape.gradient(z);
    CHECK(adj[0] == doctest::Approx(4.0));  // only the outer factor
}

TEST_CASE("Eigen matrix product gradients match finite differences") {
    pdg::Rng rng(11);
    const int n = 3, d = 4, m = 2;
    Eigen::MatrixXd x0(n, d), w0(d, m);
    for (Eigen::Index k = 0; k < x0.size(); ++k) x0.data()[k] = rng.normal();
    for (Eigen::Index k = 0; k < w0.size(); ++k) w0.data()[k] = rng.normal();

    auto loss_value = [&](const Eigen::MatrixXd& w) {
        const Eigen::MatrixXd y = x0 * w;
        return (y.array() * y.array()).sum();
    };

    Tape tape;
    pdg::MatrixX<Var> w(d, m);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = tape.leaf(w0.data()[k]);
    const pdg::MatrixX<Var> x = x0.cast<Var>();
    const pdg::MatrixX<Var> y = x * w;
    Var loss = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) loss += y.data()[k] * y.data()[k];
    const auto adj = tape.gradient(loss);

    for (Eigen::Index k = 0; k < w.size(); ++k) {
        Eigen::MatrixXd wp = w0, wm = w0;
        wp.data()[k] += 1e-6;
        wm.data()[k] -= 1e-6;
        const double expect = (loss_value(wp) - loss_value(wm)) / 2e-6;
        CHECK(adj[static_cast<std::size_t>(k)] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("Eigen reductions and mixed double ops work on Var") {
    Tape tape;
    pdg::MatrixX<Var> m(2, 2);
    m << tape.leaf(1.0), tape.leaf(2.0), tape.leaf(3.0), tape.leaf(4.0);
    const Var s = m.sum() / 2.0 + 0.5 * m(0, 0);
    CHECK(s.v == doctest::Approx(5.5));
    const auto adj = tape.gradient(s);
    CHECK(adj[0] == doctest::Approx(1.0));
    CHECK(adj[1] == doctest::Approx(0.5));
}

TEST_CASE("tape reuse after clear") {
    Tape tape;
    const Var x = tape.leaf(3.0);
    (void)tape.gradient(x * x);
    tape.clear();
    CHECK(tape.size() == 0);
    const Var y = tape.leaf(4.0);
    const auto adj = tape.gradient(y * y * y);
    CHECK(adj[0] == doctest::Approx(48.0));
}

TEST_CASE("gradient accumulates through fan-out") {
    Tape tape;
    const Var x = tape.leaf(2.0);
    const Var a = x * 3.0;
    const Var b = x * x;
    const Var z = a + b + a * b;
    // z = 3x + x^2 + 3x^3 ; dz = 3 + 2x + 9x^2
    CHECK(tape.gradient(z)[0] == doctest::Approx(3.0 + 4.0 + 36.0));
}
