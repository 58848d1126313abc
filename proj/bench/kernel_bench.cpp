// Serial reference vs OpenMP kernels: wall time and agreement.
//
//   kernel_bench [--reps N] [--size N]

#include "patchpad/image.hpp"
#include "patchpad/kernels.hpp"
#include "patchpad/rng.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

using namespace patchpad;
namespace k = patchpad::kernels;

namespace {

double best_ms(std::size_t reps, const std::function<void()>& f) {
    double best = 1e300;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

template <class T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

void row(const char* name, double serial_ms, double parallel_ms, bool same) {
    std::printf("%-22s %10.3f %10.3f %8.2fx  %s\n", name, serial_ms, parallel_ms, serial_ms / parallel_ms,
                same ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel benchmark"};
    std::size_t reps = 5, size = 256;
    app.add_option("--reps", reps, "Repetitions (best time is reported)");
    app.add_option("--size", size, "Square matrix size");
    CLI11_PARSE(app, argc, argv);

    Rng rng(7);
    const std::size_t n = size;
    std::vector<double> a(n * n), b(n * n);
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);

    std::printf("threads: %d\n", k::max_threads());
    std::printf("%-22s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

    using Gemm = void (*)(std::size_t, std::size_t, std::size_t, std::span<const double>, std::span<const double>,
                          std::span<double>);
    const struct {
        const char* name;
        Gemm s, p;
    } gemms[] = {{"gemm_nn", k::serial::gemm_nn, k::parallel::gemm_nn},
                 {"gemm_nt", k::serial::gemm_nt, k::parallel::gemm_nt},
                 {"gemm_tn", k::serial::gemm_tn, k::parallel::gemm_tn}};
    bool all_same = true;
    for (const auto& g : gemms) {
        std::vector<double> cs(n * n), cp(n * n);
        const double ts = best_ms(reps, [&] {
            std::fill(cs.begin(), cs.end(), 0.0);
            g.s(n, n, n, a, b, cs);
        });
        const double tp = best_ms(reps, [&] {
            std::fill(cp.begin(), cp.end(), 0.0);
            g.p(n, n, n, a, b, cp);
        });
        char label[64];
        std::snprintf(label, sizeof label, "%s %zux%zu", g.name, n, n);
        const bool same = same_bits(cs, cp);
        all_same = all_same && same;
        row(label, ts, tp, same);
    }

    RgbImage img(2048, 1280);
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            img.set(x, y, rng.uniform() < 0.3 ? Rgb{0, 0, 0} : Rgb{200, 180, 160});
    for (std::size_t p : {64, 128}) {
        const std::size_t tiles = (img.width() / p) * (img.height() / p);
        std::vector<std::uint32_t> cs(tiles), cp(tiles);
        const double ts = best_ms(reps, [&] { k::serial::tile_black_counts(img, p, cs); });
        const double tp = best_ms(reps, [&] { k::parallel::tile_black_counts(img, p, cp); });
        char label[64];
        std::snprintf(label, sizeof label, "black tiles p=%zu", p);
        const bool same = same_bits(cs, cp);
        all_same = all_same && same;
        row(label, ts, tp, same);
    }
    return all_same ? 0 : 1;
}
