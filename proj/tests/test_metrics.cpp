#include "patchpad/metrics.hpp"

#include "oracles.hpp"
#include "patchpad/error.hpp"
#include "patchpad/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace patchpad;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> pool(patchpad::Rng& rng, std::size_t n, double mean, bool quantize) {
    std::vector<double> v(n);
    for (auto& s : v) {
        s = rng.normal(mean, 1.0);
        // Coarse grids create ties inside and across pools.
        if (quantize) s = std::round(s * 4.0) / 4.0;
    }
    return v;
}

}  // namespace

TEST_CASE("error rates follow the acceptance convention") {
    const std::vector<double> bona{0.1, 0.2, 0.8};
    CHECK(bpcer(bona, 0.9) == 0.0);
    CHECK(bpcer(bona, -kInf) == 1.0);
    CHECK(bpcer(bona, 0.5) == doctest::Approx(1.0 / 3.0));
    CHECK(bpcer(bona, 0.8) == doctest::Approx(1.0 / 3.0));
    const std::vector<double> att{0.4, 0.6, 0.9};
    CHECK(apcer(att, 0.3) == 0.0);
    CHECK(apcer(att, 1.0) == 1.0);
    CHECK(apcer(att, 0.5) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(bpcer(std::vector<double>{}, 0.5), Error);
    CHECK_THROWS_AS(apcer(std::vector<double>{}, 0.5), Error);
}

TEST_CASE("rates are monotone in the threshold") {
    Rng rng(1);
    const auto b = pool(rng, 50, 0.0, true), a = pool(rng, 70, 1.0, true);
    double pb = 2.0, pa = -1.0;
    for (double t = -5.0; t <= 6.0; t += 0.05) {
        const double vb = bpcer(b, t), va = apcer(a, t);
        CHECK(vb <= pb);
        CHECK(va >= pa);
        pb = vb;
        pa = va;
    }
}

TEST_CASE("equal error rate landmarks") {
    const std::vector<double> lo{0.1, 0.2, 0.3}, hi{0.7, 0.8};
    const auto sep = eer(lo, hi);
    CHECK(sep.eer == 0.0);
    CHECK(sep.point.threshold > 0.3);
    CHECK(sep.point.threshold < 0.7);

    const std::vector<double> same{0.1, 0.4, 0.4, 0.9};
    CHECK(std::abs(eer(same, same).eer - 0.5) <= 0.25);

    const std::vector<double> b{0.1, 0.6}, a{0.4, 0.9};
    CHECK(eer(b, a).eer == oracle::eer(b, a));
    CHECK(eer(b, a).eer == 0.5);

    CHECK_THROWS_AS(eer(std::vector<double>{}, a), Error);
}

TEST_CASE("sweep matches brute-force enumeration") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t nb = 1 + rng.below(120), na = 1 + rng.below(120);
        const bool q = trial % 2 == 0;
        const double shift = rng.uniform(-1.0, 3.0);
        const auto b = pool(rng, nb, 0.0, q), a = pool(rng, na, shift, q);
        const auto r = eer(b, a);
        REQUIRE(r.eer == oracle::eer(b, a));
        CHECK(r.eer >= 0.0);
        CHECK(r.eer <= 1.0);
        for (double target : {0.0, 0.01, 0.05, 0.1, 0.5, 1.0}) {
            REQUIRE(bpcer_at_apcer(b, a, target) == oracle::bpcer_at_apcer(b, a, target));
        }
    }
}

TEST_CASE("error rate stays near one half for a non-inverted scorer") {
    // An inverted scorer (attacks below bona fide) can reach an EER of 1, so
    // the bound is only asserted when attacks score at least as high.
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nb = 50 + rng.below(200), na = 50 + rng.below(200);
        const auto b = pool(rng, nb, 0.0, trial % 2), a = pool(rng, na, rng.uniform(0.0, 3.0), trial % 2);
        CHECK(eer(b, a).eer <= 0.5 + 0.1);
    }
    const std::vector<double> hi{0.9, 0.8}, lo{0.1, 0.2};
    CHECK(eer(hi, lo).eer == 1.0);
}

TEST_CASE("positive affine maps preserve the error rate") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = pool(rng, 40, 0.0, trial % 2), a = pool(rng, 30, 1.0, trial % 2);
        const auto r = eer(b, a);
        for (auto& s : b) s = 4.0 * s + 1.0;
        for (auto& s : a) s = 4.0 * s + 1.0;
        const auto t = eer(b, a);
        CHECK(t.eer == r.eer);
        if (std::isfinite(r.point.threshold)) CHECK(t.point.threshold == doctest::Approx(4.0 * r.point.threshold + 1.0).epsilon(1e-14));
    }
}

TEST_CASE("bpcer at a fixed apcer") {
    const std::vector<double> lo{0.1, 0.2, 0.3}, hi{0.7, 0.8};
    CHECK(bpcer_at_apcer(lo, hi, 0.01) == 0.0);
    CHECK(bpcer_at_apcer(hi, lo, 1.0) == 0.0);
    CHECK(bpcer_at_apcer(hi, lo, 0.0) == 1.0);
    CHECK_THROWS_AS(bpcer_at_apcer(lo, hi, 1.5), Error);
}

TEST_CASE("interpolated equal error rate") {
    const std::vector<double> lo{0.1, 0.2, 0.3}, hi{0.7, 0.8};
    CHECK(eer_interpolated(lo, hi) == 0.0);
    const std::vector<double> b{0.1, 0.6}, a{0.4, 0.9};
    CHECK(eer_interpolated(b, a) == doctest::Approx(0.5));
    Rng rng(5);
    const auto pb = pool(rng, 300, 0.0, false), pa = pool(rng, 300, 1.5, false);
    CHECK(std::abs(eer_interpolated(pb, pa) - eer(pb, pa).eer) < 0.01);
}

TEST_CASE("per attack report") {
    Rng rng(6);
    ScoreSet s;
    s.bona_fide = pool(rng, 60, 0.0, false);
    s.attacks["screen"] = pool(rng, 50, 2.0, false);
    auto single = per_pai_report(s);
    REQUIRE(single.entries.size() == 1);
    CHECK(*single.entries[0].eer == *single.all);

    s.attacks["print"] = pool(rng, 40, 1.0, false);
    s.attacks["composite"] = pool(rng, 30, 0.5, false);
    const std::vector<std::string> cols{"screen", "print", "composite", "gray_print"};
    const auto rep = per_pai_report(s, cols);
    REQUIRE(rep.entries.size() == 4);
    for (int i = 0; i < 3; ++i) CHECK(*rep.entries[i].eer == oracle::eer(s.bona_fide, s.attacks[cols[i]]));
    CHECK(!rep.entries[3].eer);
    CHECK(rep.entries[3].note == "N/A");
    CHECK(*rep.all == oracle::eer(s.bona_fide, s.pooled_attacks()));

    s.attacks["synthetic"] = {};
    const auto skipped = per_pai_report(s);
    bool warned = false;
    for (const auto& e : skipped.entries) warned = warned || (e.attack_type == "synthetic" && !e.eer && !e.note.empty());
    CHECK(warned);
}
