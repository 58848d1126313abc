#include "patchpad/fusion.hpp"

#include "patchpad/gradcheck.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace patchpad;
using ad::Tensor;

namespace {

Tensor randn(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.data()) v = rng.normal() * s;
    return t;
}

// Plain-loop multi-head attention used as an independent reference.
std::vector<double> reference_mhsa(const Tensor& x, const MhsaBlock& b, const AttendMask& attend) {
    const std::size_t n = x.rows(), d = x.cols(), dh = d / b.heads;
    auto proj = [&](const Tensor& w, std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += x(i, k) * w(k, j);
        return s;
    };
    std::vector<double> cat(n * d, 0.0);
    for (std::size_t h = 0; h < b.heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logit(n, -INFINITY);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                if (!attend[j]) continue;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += proj(b.wq[h].value, i, c) * proj(b.wk[h].value, j, c);
                logit[j] = s / std::sqrt(double(dh));
                mx = std::max(mx, logit[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) z += attend[j] ? std::exp(logit[j] - mx) : 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (attend[j]) acc += std::exp(logit[j] - mx) / z * proj(b.wv[h].value, j, c);
                cat[i * d + h * dh + c] = acc;
            }
        }
    }
    std::vector<double> out(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) out[i * d + j] += cat[i * d + k] * b.wo.value(k, j);
    return out;
}

}  // namespace

TEST_CASE("attention basics") {
    ad::Tape t;
    Tensor v(1, 3, {1.5, -2.0, 4.0});
    const Tensor& one = attention(t.constant(Tensor(1, 2, {0.3, 0.1})), t.constant(Tensor(1, 2, {5, 6})), t.constant(v), {1}).value();
    CHECK(one == v);

    Tensor k(3, 2, {1, 1, 1, 1, 1, 1});
    Tensor vv(3, 1, {1.0, 2.0, 6.0});
    const Tensor& uni = attention(t.constant(Tensor(2, 2, {0.2, 0.9, -3, 1})), t.constant(k), t.constant(vv), {1, 1, 1}).value();
    CHECK(uni[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(uni[1] == doctest::Approx(3.0).epsilon(1e-15));

    // q.k has logits (0, ln 3) at d_k = 1.
    Tensor kk(2, 1, {0.0, std::log(3.0)});
    Tensor v2(2, 1, {10.0, 2.0});
    const Tensor& hand = attention(t.constant(Tensor(1, 1, {1.0})), t.constant(kk), t.constant(v2), {1, 1}).value();
    CHECK(hand[0] == doctest::Approx(0.25 * 10.0 + 0.75 * 2.0).epsilon(1e-14));

    CHECK_THROWS_AS(attention(t.constant(Tensor(1, 1, {1.0})), t.constant(kk), t.constant(v2), {0, 0}), Error);
}

TEST_CASE("mhsa against an independent implementation") {
    Rng rng(3);
    for (std::size_t heads : {1u, 2u, 4u}) {
        MhsaBlock b(8, heads, "b", rng);
        const Tensor x = randn(3, 8, rng);
        const AttendMask mask{1, 0, 1};
        ad::Tape t;
        const Tensor& got = mhsa(t, t.constant(x), b, mask).value();
        const auto ref = reference_mhsa(x, b, mask);
        double worst = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
        CHECK(worst < 1e-12);
    }
    MhsaBlock b(8, 2, "b", rng);
    b.wo.value.fill(0.0);
    ad::Tape t;
    for (double v : mhsa(t, t.constant(randn(4, 8, rng)), b, AttendMask(4, 1)).value().data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(MhsaBlock(10, 4, "x", rng), Error);
}

TEST_CASE("single identity head reduces to plain attention") {
    Rng rng(4);
    MhsaBlock b(4, 1, "b", rng);
    for (auto* p : {&b.wq[0], &b.wk[0], &b.wv[0], &b.wo}) {
        p->value.fill(0.0);
        for (std::size_t i = 0; i < 4; ++i) p->value(i, i) = 1.0;
    }
    const Tensor x = randn(5, 4, rng);
    ad::Tape t;
    ad::Var xv = t.constant(x);
    CHECK(mhsa(t, xv, b, AttendMask(5, 1)).value() == attention(xv, xv, xv, AttendMask(5, 1)).value());
}

TEST_CASE("zeroed attention is a pure residual and padded rows pass through") {
    Rng rng(5);
    MhsaBlock b(8, 4, "b", rng);
    b.wo.value.fill(0.0);
    const Tensor x = randn(4, 8, rng);
    ad::Tape t;
    CHECK(block_forward(t, t.constant(x), b, AttendMask(4, 1)).value() == x);

    MhsaBlock live(8, 4, "c", rng);
    const AttendMask mask{1, 1, 0, 1};
    for (bool pre : {true, false}) {
        const Tensor& y = block_forward(t, t.constant(x), live, mask, pre).value();
        for (std::size_t j = 0; j < 8; ++j) CHECK(y(2, j) == x(2, j));
    }
}

TEST_CASE("attention pool") {
    ad::Tape t;
    Tensor one(1, 3, {0.5, -1.0, 2.0});
    CHECK(attn_pool(t.constant(one), t.constant(Tensor(1, 3, {4, 5, 6})), {1}).value() == one);

    Tensor same(3, 2, {1.5, -0.5, 1.5, -0.5, 1.5, -0.5});
    const Tensor& s = attn_pool(t.constant(same), t.constant(Tensor(1, 2, {3.0, 7.0})), {1, 1, 1}).value();
    CHECK(s[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(-0.5).epsilon(1e-15));

    // With d = 4 the temperature is 2; logits q.z_i / 2 = (0, 1, 2).
    Tensor z(3, 4, {0, 0, 0, 0, 2, 0, 0, 0, 0, 4, 0, 0});
    Tensor q(1, 4, {1, 1, 0, 0});
    const Tensor& w = attn_pool_weights(t.constant(z), t.constant(q), {1, 1, 1}).value();
    const double e0 = 1.0, e1 = std::exp(1.0), e2 = std::exp(2.0), zs = e0 + e1 + e2;
    CHECK(w[0] == doctest::Approx(e0 / zs).epsilon(1e-14));
    CHECK(w[2] == doctest::Approx(e2 / zs).epsilon(1e-14));
    const Tensor& zo = attn_pool(t.constant(z), t.constant(q), {1, 1, 1}).value();
    CHECK(zo[0] == doctest::Approx(2.0 * e1 / zs).epsilon(1e-14));
    CHECK(zo[1] == doctest::Approx(4.0 * e2 / zs).epsilon(1e-14));
    CHECK_THROWS_AS(attn_pool(t.constant(z), t.constant(q), {0, 0, 0}), Error);
}

TEST_CASE("scorer") {
    ad::Tape t;
    ad::Var z = t.constant(Tensor(1, 2, {3.0, -1.0}));
    CHECK(score(z, t.constant(Tensor::zeros(1, 2)), t.constant(Tensor::scalar(0.7))).value()[0] ==
          doctest::Approx(1.0 / (1.0 + std::exp(-0.7))));
    CHECK(score(t.constant(Tensor(1, 2, {1.0, 1.0})), t.constant(Tensor(1, 2, {1.0, -1.0})), t.constant(Tensor::scalar(0.0))).value()[0] == 0.5);
    CHECK(score(t.constant(Tensor(1, 1, {std::log(3.0)})), t.constant(Tensor(1, 1, {1.0})), t.constant(Tensor::scalar(0.0))).value()[0] ==
          doctest::Approx(0.75).epsilon(1e-15));
    double prev = 0.0;
    for (double a = -5.0; a <= 5.0; a += 0.25) {
        const double s = score(t.constant(Tensor(1, 1, {a})), t.constant(Tensor(1, 1, {1.0})), t.constant(Tensor::scalar(0.0))).value()[0];
        CHECK(s > prev);
        prev = s;
    }
}

TEST_CASE("weighted binary cross entropy") {
    const BceWeights unit{1.0, 1.0};
    CHECK(weighted_bce(0.5, 0, unit) == doctest::Approx(std::log(2.0)));
    CHECK(weighted_bce(0.5, 1, unit) == doctest::Approx(std::log(2.0)));
    CHECK(weighted_bce(1.0 - 1e-15, 1, unit) < 1e-12);
    CHECK(std::isfinite(weighted_bce(1.0, 0, unit)));
    CHECK(weighted_bce(0.0, 1, unit) == doctest::Approx(-std::log(1e-12)));
    const BceWeights w;
    CHECK(weighted_bce(0.3, 0, w) == doctest::Approx(-3.0 * std::log(0.7)));

    const std::vector<double> s{0.2, 0.9, 0.6, 0.4};
    const std::vector<int> y{0, 1, 1, 0};
    ad::Tape t;
    double oracle = 0.0;
    std::optional<ad::Var> total;
    for (std::size_t i = 0; i < 4; ++i) {
        oracle += -(y[i] ? 1.0 : 3.0) * (y[i] ? std::log(s[i]) : std::log(1.0 - s[i]));
        ad::Var l = weighted_bce(t.constant(Tensor::scalar(s[i])), y[i], w);
        total = total ? ad::add(*total, l) : l;
    }
    CHECK(total->value()[0] == doctest::Approx(oracle).epsilon(1e-14));
}

TEST_CASE("full fusion stack passes the finite-difference check") {
    Rng rng(8);
    FusionModel m(16, 9);
    const Tensor z = randn(5, 16, rng);
    for (int y : {0, 1}) {
        for (const AttendMask& mask : {AttendMask(5, 1), AttendMask{1, 1, 0, 1, 0}}) {
            auto build = [&](ad::Tape& t) { return weighted_bce(m.forward(t, t.constant(z), mask), y, BceWeights{}); };
            const auto r = finite_diff_check(build, m.parameters());
            CAPTURE(r.worst_param);
            CHECK(r.max_rel_error < 1e-5);
        }
    }
}

TEST_CASE("document score is permutation invariant") {
    Rng rng(10);
    FusionModel m(32, 1);
    double worst = 0.0;
    for (int doc = 0; doc < 10; ++doc) {
        const std::size_t n = 2 + rng.below(30);
        const Tensor z = randn(n, 32, rng, 2.0);
        const double base = m.score_document(z);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (int p = 0; p < 5; ++p) {
            rng.shuffle(std::span<std::size_t>(perm));
            Tensor zp = Tensor::zeros(n, 32);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < 32; ++j) zp(i, j) = z(perm[i], j);
            worst = std::max(worst, std::abs(m.score_document(zp) - base));
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("padded rows never influence attended outputs") {
    Rng rng(12);
    FusionModel m(16, 2);
    const Tensor z = randn(6, 16, rng);
    auto [padded, mask] = pad_sequence(z, 20);
    const double base = m.score_document(padded, mask);
    CHECK(base == m.score_document(z));
    for (int trial = 0; trial < 5; ++trial) {
        Tensor noisy = padded;
        for (std::size_t i = 6; i < 20; ++i)
            for (std::size_t j = 0; j < 16; ++j) noisy(i, j) = rng.normal() * 100.0;
        ad::Tape t1, t2;
        FusionModel a = m, b = m;
        const Tensor& h1 = block_forward(t1, t1.constant(padded), a.block1, mask).value();
        const Tensor& h2 = block_forward(t2, t2.constant(noisy), b.block1, mask).value();
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 16; ++j) REQUIRE(h1(i, j) == h2(i, j));
        CHECK(m.score_document(noisy, mask) == base);
    }
    ad::Tape t;
    const Tensor& w = attn_pool_weights(t.constant(padded), t.constant(m.pool_query.value), mask).value();
    double sum = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        if (i >= 6) CHECK(w[i] < 1e-15);
        sum += w[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("subsampling keeps a seeded subset") {
    Rng a(1), b(1);
    const auto ra = subsample_rows(1000, 384, a);
    CHECK(ra.size() == 384);
    CHECK(std::is_sorted(ra.begin(), ra.end()));
    CHECK(std::adjacent_find(ra.begin(), ra.end()) == ra.end());
    CHECK(ra == subsample_rows(1000, 384, b));
    CHECK(subsample_rows(10, 384, a).size() == 10);
}

TEST_CASE("fusion training learns a separable set and is reproducible") {
    Rng rng(20);
    auto make = [&](std::size_t count) {
        std::vector<FusionDoc> docs;
        for (std::size_t i = 0; i < count; ++i) {
            FusionDoc d;
            d.doc_id = "d" + std::to_string(docs.size());
            d.is_attack = i % 4 != 0;
            const std::size_t n = 3 + rng.below(8);
            d.z = randn(n, 16, rng);
            for (std::size_t r = 0; r < n; ++r) d.z(r, 0) += d.is_attack ? 2.5 : -2.5;
            docs.push_back(std::move(d));
        }
        return docs;
    };
    const auto train = make(48), val = make(16);
    FusionTrainConfig cfg;
    cfg.seed = 4;
    cfg.lr_initial = 3e-3;
    cfg.lr_final = 3e-4;
    const auto a = train_fusion(train, val, cfg);
    const auto b = train_fusion(train, val, cfg);
    CHECK(a.model.score_w.value == b.model.score_w.value);
    CHECK(fusion_log_json(a.log) == fusion_log_json(b.log));
    CHECK(a.log.back().val_loss < a.log.front().val_loss);
    const auto s = score_documents(a.model, val);
    int correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) correct += (s[i] >= 0.5) == (val[i].is_attack == 1);
    CHECK(correct >= 15);

    cfg.pad_to_context = true;
    cfg.context = 16;
    const auto padded = train_fusion(train, val, cfg);
    CHECK(padded.model.score_w.value == a.model.score_w.value);
}

TEST_CASE("fusion checkpoint and score file round trip") {
    FusionModel m(16, 3, false);
    Checkpoint ck;
    m.save(ck);
    const auto back = FusionModel::load(ck);
    CHECK(back.block1.heads == 8);
    CHECK(back.block2.heads == 4);
    CHECK(!back.pre_norm);
    CHECK(back.block2.wk[3].value == m.block2.wk[3].value);
    CHECK(back.score_b.value == m.score_b.value);

    const std::vector<ScoreRecord> s{{"a", "real", "none", 0.125}, {"b", "print", "print", 0.875}};
    const auto path = std::filesystem::temp_directory_path() / "patchpad_test_scores.jsonl";
    write_scores(s, path);
    const auto r = read_scores(path);
    REQUIRE(r.size() == 2);
    CHECK(r[1].attack_type == "print");
    CHECK(r[1].score == 0.875);
    std::filesystem::remove(path);
}
