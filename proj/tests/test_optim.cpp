#include "patchpad/optim.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace patchpad;
using ad::Parameter;
using ad::Tensor;

TEST_CASE("zero gradient without decay leaves parameters alone") {
    Parameter p("p", Tensor(1, 3, {1.0, -2.0, 3.0}));
    const Tensor before = p.value;
    Adam adam({&p}, AdamConfig{});
    for (int i = 0; i < 5; ++i) adam.step(0.1);
    CHECK(p.value == before);
    CHECK(adam.steps() == 5);
}

TEST_CASE("first step moves by lr times the gradient sign") {
    Parameter p("p", Tensor(1, 3, {0.0, 0.0, 0.0}));
    p.grad = Tensor(1, 3, {1e6, -1e6, 1e3});
    Adam adam({&p}, AdamConfig{});
    adam.step(0.01);
    CHECK(p.value[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("decoupled and coupled weight decay differ as designed") {
    Parameter a("a", Tensor(1, 1, {2.0})), b("b", Tensor(1, 1, {2.0}));
    Adam dec({&a}, {0.9, 0.999, 1e-8, 0.1, true});
    Adam cou({&b}, {0.9, 0.999, 1e-8, 0.1, false});
    dec.step(0.5);
    cou.step(0.5);
    // Decoupled: only the shrink term acts on a zero gradient.
    CHECK(a.value[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0));
    // Coupled: the decay flows through the moments, giving a unit-size step.
    CHECK(b.value[0] == doctest::Approx(1.5).epsilon(1e-6));
}

namespace {

// f(x) = 0.5 x^T A x - c^T x with A = [[3, 1], [1, 2]], c = (1, 2).
std::array<double, 2> quad_grad(const Tensor& x) {
    return {3 * x[0] + x[1] - 1.0, x[0] + 2 * x[1] - 2.0};
}

}  // namespace

TEST_CASE("Adam matches an independent moment recurrence") {
    Parameter x("x", Tensor(1, 2, {4.0, -3.0}));
    const AdamConfig cfg{0.9, 0.999, 1e-8, 1e-2, true};
    Adam adam({&x}, cfg);
    double ref[2] = {4.0, -3.0}, m[2] = {0, 0}, v[2] = {0, 0};
    for (int k = 1; k <= 100; ++k) {
        const auto g = quad_grad(x.value);
        x.grad[0] = g[0];
        x.grad[1] = g[1];
        adam.step(0.05);
        adam.zero_grad();
        const double rg[2] = {3 * ref[0] + ref[1] - 1.0, ref[0] + 2 * ref[1] - 2.0};
        for (int i = 0; i < 2; ++i) {
            ref[i] -= 0.05 * cfg.weight_decay * ref[i];
            m[i] = 0.9 * m[i] + 0.1 * rg[i];
            v[i] = 0.999 * v[i] + 0.001 * rg[i] * rg[i];
            const double mh = m[i] / (1 - std::pow(0.9, k)), vh = v[i] / (1 - std::pow(0.999, k));
            ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
        }
        REQUIRE(x.value[0] == doctest::Approx(ref[0]).epsilon(1e-12));
        REQUIRE(x.value[1] == doctest::Approx(ref[1]).epsilon(1e-12));
    }
}

TEST_CASE("Adam solves a convex quadratic in 100 steps") {
    // beta1 = 0.9 momentum is still ringing after 100 steps on this problem,
    // so the check uses lighter momentum with a decaying rate.
    Parameter x("x", Tensor(1, 2, {4.0, -3.0}));
    Adam adam({&x}, {0.5, 0.999, 1e-8, 0.0, true});
    const LrSchedule lr{0.5, 0.0, 0, 100};
    for (std::size_t k = 0; k < 100; ++k) {
        const auto g = quad_grad(x.value);
        x.grad[0] = g[0];
        x.grad[1] = g[1];
        adam.step(lr.at(k + 1));
        adam.zero_grad();
    }
    const auto g = quad_grad(x.value);
    CHECK(std::hypot(g[0], g[1]) < 1e-3);
}

TEST_CASE("learning rate schedule landmarks") {
    const auto s = LrSchedule::from_epochs(1.25e-4, 1.25e-5, 1, 10, 50);
    CHECK(s.at(0) == 0.0);
    CHECK(s.at(25) == doctest::Approx(1.25e-4 / 2));
    CHECK(s.at(50) == 1.25e-4);
    CHECK(s.at(50 + 225) == doctest::Approx((1.25e-4 + 1.25e-5) / 2).epsilon(1e-12));
    CHECK(s.at(500) == 1.25e-5);
    double prev = s.at(50);
    for (std::size_t k = 51; k <= 500; ++k) {
        const double v = s.at(k);
        CHECK(v <= prev);
        CHECK(v >= 1.25e-5);
        prev = v;
    }
    const auto none = LrSchedule::from_epochs(1.25e-3, 1.25e-4, 0, 70, 3);
    CHECK(none.at(0) == 1.25e-3);
    CHECK(none.at(210) == 1.25e-4);
}
