#include "patchpad/autodiff.hpp"
#include "patchpad/checkpoint.hpp"
#include "patchpad/error.hpp"
#include "patchpad/gradcheck.hpp"
#include "patchpad/kernels.hpp"
#include "patchpad/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace patchpad;
using namespace patchpad::ad;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.data()) v = rng.normal() * scale;
    return t;
}

// Straightforward triple loop used as an independent product.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul matches a naive product") {
    Rng rng(1);
    Tensor a = random_tensor(7, 5, rng), b = random_tensor(5, 3, rng);
    Tape t;
    const Tensor& c = matmul(t.constant(a), t.constant(b)).value();
    const Tensor ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng rng(2);
    for (auto [m, n, k] : {std::array<std::size_t, 3>{3, 4, 5}, {130, 70, 90}, {257, 129, 64}}) {
        Tensor a = random_tensor(m, k, rng), b = random_tensor(k, n, rng);
        Tensor bt = random_tensor(n, k, rng), at = random_tensor(k, m, rng);
        std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
        kernels::serial::gemm_nn(m, n, k, a.data(), b.data(), c1);
        kernels::parallel::gemm_nn(m, n, k, a.data(), b.data(), c2);
        CHECK(c1 == c2);
        std::fill(c1.begin(), c1.end(), 0.0);
        std::fill(c2.begin(), c2.end(), 0.0);
        kernels::serial::gemm_nt(m, n, k, a.data(), bt.data(), c1);
        kernels::parallel::gemm_nt(m, n, k, a.data(), bt.data(), c2);
        CHECK(c1 == c2);
        std::fill(c1.begin(), c1.end(), 0.0);
        std::fill(c2.begin(), c2.end(), 0.0);
        kernels::serial::gemm_tn(m, n, k, at.data(), b.data(), c1);
        kernels::parallel::gemm_tn(m, n, k, at.data(), b.data(), c2);
        CHECK(c1 == c2);
    }
}

TEST_CASE("shape errors name both shapes") {
    Tape t;
    try {
        matmul(t.constant(Tensor::zeros(2, 3)), t.constant(Tensor::zeros(2, 3)));
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
    CHECK_THROWS_AS(add(t.constant(Tensor::zeros(2, 3)), t.constant(Tensor::zeros(3, 2))), Error);
}

TEST_CASE("non-finite values are rejected at the producing node") {
    Tape t;
    Var x = t.constant(Tensor(1, 2, {0.0, 1.0}));
    try {
        log(x);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("softmax edge cases") {
    Tape t;
    Parameter p("x", Tensor(1, 1, {3.7}));
    Var y = row_softmax(t.param(p));
    CHECK(y.value()[0] == 1.0);
    t.backward(sum(y));
    CHECK(p.grad[0] == 0.0);

    Rng rng(3);
    Tape t2;
    const Tensor& s = row_softmax(t2.constant(random_tensor(6, 9, rng, 20.0))).value();
    for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            CHECK(s(i, j) >= 0.0);
            row += s(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
    }

    Tape t3;
    std::vector<std::uint8_t> all(3, 1);
    Var m = masked_fill(t3.constant(Tensor::zeros(1, 3)), all, -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(row_softmax(m), Error);
}

TEST_CASE("layer norm of a constant row is zero before the affine part") {
    Tape t;
    Var x = t.constant(Tensor(1, 4, {2.5, 2.5, 2.5, 2.5}));
    Var g = t.constant(Tensor(1, 4, {1, 1, 1, 1}));
    Var b = t.constant(Tensor::zeros(1, 4));
    for (double v : layer_norm(x, g, b).value().data()) CHECK(v == 0.0);
}

TEST_CASE("every primitive passes the finite-difference check") {
    Rng rng(7);
    Parameter a("a", random_tensor(4, 5, rng)), b("b", random_tensor(5, 3, rng)), c("c", random_tensor(4, 3, rng));
    Parameter row("row", random_tensor(1, 3, rng)), g("g", random_tensor(1, 3, rng)), beta("beta", random_tensor(1, 3, rng));
    Parameter pos("pos", random_tensor(4, 3, rng));
    for (double& v : pos.value.data()) v = 0.5 + std::abs(v);

    struct Case {
        const char* name;
        std::function<Var(Tape&)> build;
        std::vector<Parameter*> params;
    };
    const std::vector<Case> cases{
        {"matmul", [&](Tape& t) { return sum(matmul(t.param(a), t.param(b))); }, {&a, &b}},
        {"transpose", [&](Tape& t) { return sum(mul(transpose(t.param(a)), transpose(t.param(a)))); }, {&a}},
        {"add", [&](Tape& t) { return sum(mul(add(t.param(c), t.param(row)), t.param(c))); }, {&c, &row}},
        {"sub", [&](Tape& t) { return sum(mul(sub(t.param(c), t.param(pos)), t.param(c))); }, {&c, &pos}},
        {"scale", [&](Tape& t) { return mean(mul(scale(t.param(c), -1.7), t.param(c))); }, {&c}},
        {"softmax", [&](Tape& t) { return sum(mul(row_softmax(t.param(c)), t.param(pos))); }, {&c, &pos}},
        {"layer_norm",
         [&](Tape& t) { return sum(mul(layer_norm(t.param(c), t.param(g), t.param(beta)), t.param(pos))); },
         {&c, &g, &beta, &pos}},
        {"sigmoid", [&](Tape& t) { return sum(mul(sigmoid(t.param(c)), t.param(c))); }, {&c}},
        {"log", [&](Tape& t) { return sum(log(t.param(pos))); }, {&pos}},
        {"masked_fill",
         [&](Tape& t) {
             return sum(mul(row_softmax(masked_fill(t.param(c), {0, 1, 0}, -std::numeric_limits<double>::infinity())),
                            t.param(pos)));
         },
         {&c, &pos}},
        {"mask_rows", [&](Tape& t) { return sum(mul(mask_rows(t.param(c), {1, 0, 1, 1}), t.param(c))); }, {&c}},
        {"concat",
         [&](Tape& t) { return sum(mul(concat_cols({t.param(c), t.param(pos)}), concat_cols({t.param(pos), t.param(c)}))); },
         {&c, &pos}},
        {"l2_normalize", [&](Tape& t) { return sum(mul(row_l2_normalize(t.param(c)), t.param(pos))); }, {&c, &pos}},
        {"cross_entropy", [&](Tape& t) { return mean(softmax_cross_entropy(t.param(c), {0, 2, 1, 2})); }, {&c}},
    };
    for (const auto& cs : cases) {
        CAPTURE(cs.name);
        const auto r = finite_diff_check(cs.build, cs.params);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("composed random graph passes the finite-difference check") {
    Rng rng(11);
    Parameter x("x", random_tensor(3, 4, rng)), w("w", random_tensor(4, 4, rng)), v("v", random_tensor(1, 4, rng));
    auto build = [&](Tape& t) {
        Var h = sigmoid(matmul(t.param(x), t.param(w)));
        Var s = row_softmax(add(h, t.param(v)));
        return mean(log(add(s, t.constant(Tensor(1, 4, {1, 1, 1, 1})))));
    };
    CHECK(finite_diff_check(build, {&x, &w, &v}).max_rel_error < 1e-6);

    Parameter lin("lin", random_tensor(3, 3, rng));
    auto linear = [&](Tape& t) { return sum(scale(t.param(lin), 2.0)); };
    CHECK(finite_diff_check(linear, {&lin}).max_rel_error < 1e-10);
}

TEST_CASE("a corrupted adjoint is caught") {
    Rng rng(12);
    Parameter x("x", random_tensor(2, 3, rng));
    auto build = [&](Tape& t) {
        Var in = t.param(x);
        Tensor out = in.value();
        for (double& v : out.data()) v = v * v;
        // Claims d(x^2)/dx = x instead of 2x.
        Var sq = t.record("bad_square", std::move(out), {in.id}, [id = in.id](Tape& tp, int, const Tensor& g) {
            if (Tensor* gi = tp.grad_sink(id))
                for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i] * tp.value(id)[i];
        });
        return sum(sq);
    };
    CHECK(finite_diff_check(build, {&x}).max_rel_error > 1e-2);
}

TEST_CASE("parameters used twice accumulate both paths") {
    Parameter p("p", Tensor(1, 1, {3.0}));
    Tape t;
    t.backward(sum(mul(t.param(p), t.param(p))));
    CHECK(p.grad[0] == 6.0);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(5);
    Checkpoint ck;
    ck.meta["kind"] = "test";
    Parameter a("a", random_tensor(3, 4, rng));
    ck.put(a);
    ck.tensors.emplace_back("rank3", Tensor({2, 3, 4}, 1.5));
    const auto path = std::filesystem::temp_directory_path() / "patchpad_test_ckpt.bin";
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.meta == ck.meta);
    CHECK(back.tensor("a") == a.value);
    CHECK(back.tensor("rank3").shape() == std::vector<std::size_t>{2, 3, 4});
    Parameter wrong("a", Tensor::zeros(2, 2));
    CHECK_THROWS_AS(back.restore(wrong), Error);
    CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing"), Error);
    std::filesystem::remove(path);
}
