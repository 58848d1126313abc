#include "patchpad/patch_pipeline.hpp"

#include "patchpad/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <regex>
#include <set>

using namespace patchpad;
namespace fs = std::filesystem;

namespace {

RgbImage noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
    Rng rng(seed);
    RgbImage img(w, h);
    // Values start at 1 so no pixel is pitch black by accident.
    for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(1 + rng.below(255));
    return img;
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("patchpad_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("anonymization paints exactly the rectangles") {
    RgbImage img(4, 4, {255, 255, 255});
    AnonymizationSpec spec{AnonLevel::pseudo, {{0, 0, 2, 2}}};
    RgbImage out = apply_anonymization(img, spec);
    int black = 0, white = 0;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const Rgb c = out.at(x, y);
            if (c == Rgb{0, 0, 0}) ++black;
            if (c == Rgb{255, 255, 255}) ++white;
        }
    CHECK(black == 4);
    CHECK(white == 12);

    CHECK(apply_anonymization(img, {}) == img);
}

TEST_CASE("anonymized area of a full-resolution capture") {
    RgbImage img(4032, 3024, {10, 20, 30});
    AnonymizationSpec spec{AnonLevel::pseudo, {{100, 200, 500, 300}}};
    RgbImage out = apply_anonymization(img, spec);
    std::size_t painted = 0;
    for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t x = 0; x < out.width(); ++x) painted += out.at(x, y) == Rgb{0, 0, 0};
    CHECK(painted == 150000);
    CHECK(static_cast<double>(painted) / (4032.0 * 3024.0) == doctest::Approx(0.0123).epsilon(0.01));
}

TEST_CASE("anonymization rejects bad rectangles") {
    RgbImage img(10, 10);
    try {
        apply_anonymization(img, {AnonLevel::full, {{8, 0, 3, 2}}});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::invalid_argument);
        CHECK(std::string(e.what()).find("(8, 0, 3, 2)") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_anonymization(img, {AnonLevel::non, {{0, 0, 1, 1}}}), Error);
}

TEST_CASE("anonymization is idempotent") {
    RgbImage img = noise_image(97, 61, 3);
    AnonymizationSpec spec{AnonLevel::full, {{3, 4, 20, 10}, {10, 8, 30, 40}}};
    RgbImage once = apply_anonymization(img, spec);
    CHECK(apply_anonymization(once, spec) == once);
}

TEST_CASE("tile grid arithmetic") {
    CHECK(tile(RgbImage(448, 448), 64).size() == 49);
    CHECK(tile(RgbImage(4032, 3024), 64).size() == 2961);
    auto one = tile(RgbImage(130, 130), 128);
    REQUIRE(one.size() == 1);
    CHECK(one[0].pixels.width() == 128);

    try {
        tile(RgbImage(200, 50), 64);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("height") != std::string::npos);
    }
    CHECK_THROWS_AS(tile(RgbImage(50, 200), 64), Error);
}

TEST_CASE("tiles cover the cropped region exactly once") {
    const std::size_t W = 203, H = 141, p = 64;
    RgbImage img = noise_image(W, H, 11);
    auto tiles = tile(img, p);
    const std::size_t gx = W / p;
    std::vector<int> cover(W * H, 0);
    for (const auto& t : tiles) {
        const std::size_t x0 = (t.grid_index % gx) * p, y0 = (t.grid_index / gx) * p;
        for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) {
                ++cover[(y0 + y) * W + x0 + x];
                REQUIRE(t.pixels.at(x, y) == img.at(x0 + x, y0 + y));
            }
    }
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const int expected = (x < gx * p && y < (H / p) * p) ? 1 : 0;
            REQUIRE(cover[y * W + x] == expected);
        }
}

TEST_CASE("black fraction counts exact zeros") {
    CHECK(black_fraction(RgbImage(64, 64, {255, 255, 255})) == 0.0);
    CHECK(black_fraction(RgbImage(64, 64)) == 1.0);
    RgbImage half(64, 64, {255, 255, 255});
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 32; ++x) half.set(x, y, {0, 0, 0});
    CHECK(black_fraction(half) == 0.5);
    RgbImage nearly(2, 1, {0, 0, 1});
    CHECK(black_fraction(nearly) == 0.0);
}

TEST_CASE("filter and sample edge cases") {
    ExtractionConfig cfg;
    Rng rng(1);
    auto black = tile(RgbImage(256, 256), 64);
    CHECK(filter_and_sample(black, cfg, rng).empty());

    cfg.keep_prob = 1.0;
    auto all = tile(noise_image(256, 256, 2), 64);
    auto kept = filter_and_sample(all, cfg, rng);
    REQUIRE(kept.size() == all.size());
    std::set<std::size_t> idx;
    for (const auto& k : kept) idx.insert(k.grid_index);
    CHECK(idx.size() == all.size());
}

TEST_CASE("keep counts follow the binomial law") {
    std::vector<CandidatePatch> cands(1000);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        cands[i].grid_index = i;
        cands[i].black_fraction = 0.0;
    }
    ExtractionConfig cfg;
    const int runs = 10000;
    double sum = 0.0;
    for (int s = 0; s < runs; ++s) {
        Rng rng(static_cast<std::uint64_t>(s));
        sum += static_cast<double>(filter_and_sample(cands, cfg, rng).size());
    }
    const double mean = sum / runs;
    const double sigma = std::sqrt(1000 * 0.9 * 0.1);
    CHECK(std::abs(mean - 900.0) < 3.0 * sigma);
}

TEST_CASE("exported patches never exceed the black threshold") {
    RgbImage img = noise_image(512, 320, 5);
    AnonymizationSpec spec{AnonLevel::full, {{0, 0, 300, 150}, {350, 200, 100, 100}}};
    ExtractionConfig cfg;
    cfg.rng_seed = 77;
    for (const auto& r : extract_patches(img, spec, cfg)) CHECK(r.black_fraction <= cfg.black_threshold);
}

TEST_CASE("export names are distinct six-digit strings and deterministic") {
    RgbImage img = noise_image(448, 448, 9);
    ExtractionConfig cfg;
    cfg.keep_prob = 1.0;
    cfg.rng_seed = 42;
    auto a = extract_patches(img, {}, cfg);
    auto b = extract_patches(img, {}, cfg);
    REQUIRE(a.size() == 49);
    const std::regex re("[0-9]{6}");
    std::set<std::string> names;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::regex_match(a[i].export_name, re));
        names.insert(a[i].export_name);
        CHECK(a[i].export_name == b[i].export_name);
        CHECK(a[i].pixels == b[i].pixels);
    }
    CHECK(names.size() == 49);
}

TEST_CASE("export round trip preserves the pixel multiset") {
    RgbImage img = noise_image(448, 320, 13);
    ExtractionConfig cfg;
    cfg.rng_seed = 3;
    const fs::path dir = scratch("roundtrip");
    Rng rng(cfg.rng_seed);
    auto kept = filter_and_sample(tile(img, cfg.patch_size), cfg, rng);
    std::multiset<std::uint64_t> before;
    for (const auto& k : kept) before.insert(content_hash(k.pixels));
    auto written = export_patchset(kept, dir, rng);

    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        ++files;
        CHECK(e.path().extension() == kPatchExtension);
    }
    CHECK(files == written.size());
    std::multiset<std::uint64_t> after;
    for (const auto& r : read_patchset(dir)) after.insert(content_hash(r.pixels));
    CHECK(before == after);
    fs::remove_all(dir);
}

TEST_CASE("stronger anonymization keeps fewer patches") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RgbImage img = noise_image(512, 320, 100 + seed);
        AnonymizationSpec pseudo{AnonLevel::pseudo, {{20, 30, 150, 80}}};
        AnonymizationSpec full{AnonLevel::full, {{20, 30, 150, 80}, {200, 100, 250, 180}}};
        ExtractionConfig cfg;
        cfg.rng_seed = seed;
        const auto n_non = extract_patches(img, {}, cfg).size();
        const auto n_pseudo = extract_patches(img, pseudo, cfg).size();
        const auto n_full = extract_patches(img, full, cfg).size();
        CHECK(n_full <= n_pseudo);
        CHECK(n_pseudo <= n_non);
    }
}

TEST_CASE("extraction config validation") {
    ExtractionConfig cfg;
    cfg.patch_size = 96;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.black_threshold = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.keep_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
