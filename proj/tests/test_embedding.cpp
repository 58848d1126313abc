#include "patchpad/embedding.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace patchpad;
namespace fs = std::filesystem;

namespace {

RgbImage sinusoid(std::size_t p, double period, bool vertical = false, std::size_t shift = 0) {
    RgbImage img(p, p);
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
            const double t = static_cast<double>((vertical ? y : x) + shift);
            const auto v = static_cast<std::uint8_t>(std::lround(127.5 + 100.0 * std::sin(2.0 * M_PI * t / period)));
            img.set(x, y, {v, v, v});
        }
    return img;
}

// Direct 2-D DFT band energies with the radius computed in floating point.
std::array<double, kFrequencyBands> direct_bands(const RgbImage& img, const StubEmbedderConfig& cfg) {
    const std::size_t p = img.width();
    std::vector<double> l(p * p);
    for (std::size_t i = 0; i < p * p; ++i) {
        double v[3];
        for (int c = 0; c < 3; ++c) v[c] = (img.bytes()[3 * i + c] / 255.0 - cfg.mean[c]) / cfg.stddev[c];
        l[i] = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
    }
    std::array<double, kFrequencyBands> e{};
    for (std::size_t ky = 0; ky < p; ++ky)
        for (std::size_t kx = 0; kx < p; ++kx) {
            if (kx == 0 && ky == 0) continue;
            std::complex<double> acc = 0.0;
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) {
                    const double ang = -2.0 * M_PI * (double(kx * x) + double(ky * y)) / double(p);
                    acc += l[y * p + x] * std::polar(1.0, ang);
                }
            const double fx = kx <= p / 2 ? double(kx) : double(kx) - double(p);
            const double fy = ky <= p / 2 ? double(ky) : double(ky) - double(p);
            const double rho = std::sqrt(fx * fx + fy * fy) / (p / 2.0);
            const int band = rho <= 0.125 + 1e-12 ? 0 : rho <= 0.25 + 1e-12 ? 1 : rho <= 0.5 + 1e-12 ? 2 : 3;
            e[band] += std::norm(acc) / double(p * p) / double(p * p);
        }
    return e;
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("patchpad_test_" + name); }

}  // namespace

TEST_CASE("patch id helpers") {
    const std::string id = make_patch_id("doc7", "012345");
    CHECK(id == "doc7/012345");
    CHECK(doc_of(id) == "doc7");
    CHECK(base_patch_id("doc7/012345#aug2") == "doc7/012345");
    CHECK(base_patch_id(id) == id);
}

TEST_CASE("constant patch has flat gradients and no AC energy") {
    StubEmbedderConfig cfg;
    RgbImage gray(64, 64, {128, 128, 128});
    const auto f = stub_features(gray, cfg);
    REQUIRE(f.size() == 18);
    CHECK(f[6] == 1.0);
    for (int i = 7; i < 14; ++i) CHECK(f[i] == 0.0);
    for (int i = 14; i < 18; ++i) CHECK(f[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("stub embedding is deterministic") {
    StubEmbedderConfig cfg;
    cfg.projection_seed = 5;
    RgbImage img = sinusoid(64, 6.0);
    CHECK(embed_stub(img, cfg) == embed_stub(img, cfg));
    RgbImage changed = img;
    changed.set(10, 10, {0, 255, 0});
    CHECK(embed_stub(changed, cfg) != embed_stub(img, cfg));
}

TEST_CASE("band energies agree with a direct transform") {
    StubEmbedderConfig cfg;
    for (double period : {8.0, 4.0, 3.0, 16.0}) {
        RgbImage img = sinusoid(32, period);
        const auto fast = band_energies(img, cfg);
        const auto slow = direct_bands(img, cfg);
        for (std::size_t b = 0; b < kFrequencyBands; ++b) CHECK(fast[b] == doctest::Approx(slow[b]).epsilon(1e-9));
    }
    Rng rng(4);
    RgbImage noise(16, 16);
    for (auto& v : noise.bytes()) v = static_cast<std::uint8_t>(rng.below(256));
    const auto fast = band_energies(noise, cfg);
    const auto slow = direct_bands(noise, cfg);
    for (std::size_t b = 0; b < kFrequencyBands; ++b) CHECK(fast[b] == doctest::Approx(slow[b]).epsilon(1e-9));
}

TEST_CASE("period-8 sinusoid puts its energy in the band of frequency p/8") {
    StubEmbedderConfig cfg;
    const std::size_t p = 64;
    const auto e = band_energies(sinusoid(p, 8.0), cfg);
    const int expected = frequency_band(p / 8, 0, p);
    CHECK(expected == 1);
    for (int b = 0; b < int(kFrequencyBands); ++b)
        if (b != expected) CHECK(e[expected] > 100.0 * e[b]);
}

TEST_CASE("doubling a frequency moves it up one band") {
    StubEmbedderConfig cfg;
    const std::size_t p = 64;
    auto dominant = [&](double period) {
        const auto e = band_energies(sinusoid(p, period), cfg);
        return int(std::max_element(e.begin(), e.end()) - e.begin());
    };
    CHECK(dominant(32.0) == 0);
    CHECK(dominant(16.0) == 0);
    CHECK(dominant(8.0) == 1);
    CHECK(dominant(4.0) == 2);
    CHECK(dominant(2.0) == 3);
    for (std::size_t k : {3u, 4u, 5u, 6u, 8u, 12u}) CHECK(frequency_band(2 * k, 0, p) == frequency_band(k, 0, p) + 1);
}

TEST_CASE("features are translation invariant for constant and periodic images") {
    StubEmbedderConfig cfg;
    RgbImage a(64, 64, {30, 90, 200});
    CHECK(stub_features(a, cfg) == stub_features(a.crop(0, 0, 64, 64), cfg));
    const auto base = band_energies(sinusoid(64, 8.0), cfg);
    const auto moved = band_energies(sinusoid(64, 8.0, false, 3), cfg);
    for (std::size_t b = 0; b < kFrequencyBands; ++b) CHECK(moved[b] == doctest::Approx(base[b]).epsilon(1e-3));
}

TEST_CASE("store round trip and validation") {
    EmbeddingStore store(3);
    const float a[3] = {1.0f, -2.5f, 3.25f}, b[3] = {0.0f, 1e-30f, -0.0f}, c[3] = {7, 8, 9};
    store.add("d1/000001", a);
    store.add("d1/000002", b);
    store.add("d2/123456", c);
    const fs::path path = scratch("store.bin");
    save_store(store, path);
    CHECK(load_store(path) == store);
    CHECK(store.indices_of_doc("d1") == std::vector<std::size_t>{0, 1});

    CHECK_THROWS_AS(store.add("d1/000001", a), StoreError);

    try {
        load_store(path, 4);
        FAIL("expected an error");
    } catch (const StoreError& e) {
        CHECK(e.store_kind() == StoreErrorKind::dimension_mismatch);
    }

    auto corrupt = [&](auto mutate) {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        mutate(bytes);
        const fs::path bad = scratch("store_bad.bin");
        std::ofstream(bad, std::ios::binary) << bytes;
        try {
            load_store(bad);
        } catch (const StoreError& e) {
            return e.store_kind();
        }
        FAIL("corrupted store loaded");
        return StoreErrorKind::bad_magic;
    };
    CHECK(corrupt([](std::string& s) { s[0] = 'X'; }) == StoreErrorKind::bad_magic);
    CHECK(corrupt([](std::string& s) { s.resize(s.size() - 2); }) == StoreErrorKind::truncated);
    CHECK(corrupt([](std::string& s) { s += "zz"; }) == StoreErrorKind::trailing_bytes);
    CHECK(corrupt([](std::string& s) {
              // Rename the second record to collide with the first.
              const auto pos = s.find("d1/000002");
              s[pos + 8] = '1';
          }) == StoreErrorKind::duplicate_id);
    fs::remove(path);
}

TEST_CASE("randomized store round trip is bitwise exact") {
    Rng rng(99);
    EmbeddingStore store(16);
    std::vector<float> v(16);
    for (int i = 0; i < 10000; ++i) {
        for (auto& x : v) {
            // Random bit patterns, restricted to finite values.
            std::uint32_t bits;
            do {
                bits = static_cast<std::uint32_t>(rng.next());
            } while (((bits >> 23) & 0xff) == 0xff);
            std::memcpy(&x, &bits, 4);
        }
        store.add("doc" + std::to_string(i % 97) + "/" + std::to_string(i), v);
    }
    const fs::path path = scratch("store_big.bin");
    save_store(store, path);
    const EmbeddingStore back = load_store(path);
    REQUIRE(back.size() == store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        REQUIRE(back.id(i) == store.id(i));
        REQUIRE(std::memcmp(back.values(i).data(), store.values(i).data(), 16 * sizeof(float)) == 0);
    }
    fs::remove(path);
}

TEST_CASE("batch lookup keeps request order and lists every missing id") {
    EmbeddingStore store(2);
    const float a[2] = {1, 2}, b[2] = {3, 4};
    store.add("x/1", a);
    store.add("x/2", b);
    CHECK(batch_lookup(store, std::vector<std::string>{}).empty());
    const std::vector<std::string> req{"x/2", "x/1"};
    auto out = batch_lookup(store, req);
    CHECK(out[0][0] == 3.0f);
    CHECK(out[1][0] == 1.0f);
    try {
        batch_lookup(store, std::vector<std::string>{"x/1", "y/1", "y/2"});
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("y/1") != std::string::npos);
        CHECK(msg.find("y/2") != std::string::npos);
    }
}

TEST_CASE("batch embedding matches single embedding") {
    StubEmbedder emb(StubEmbedderConfig{});
    std::vector<RgbImage> patches;
    for (int i = 0; i < 20; ++i) patches.push_back(sinusoid(64, 3.0 + i));
    const auto batch = emb.embed_batch(patches);
    for (std::size_t i = 0; i < patches.size(); ++i) CHECK(batch[i] == emb.embed(patches[i]));
}

TEST_CASE("augmentation keeps shape and is seeded") {
    RgbImage img = sinusoid(64, 5.0);
    AugmentConfig cfg;
    cfg.prob = 1.0;
    Rng r1(3), r2(3);
    const RgbImage a = augment(img, cfg, r1), b = augment(img, cfg, r2);
    CHECK(a == b);
    CHECK(a.width() == 64);
    CHECK(a != img);
    cfg.prob = 0.0;
    Rng r3(3);
    CHECK(augment(img, cfg, r3) == img);
}
