#include "patchpad/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstring>

namespace patchpad::kernels {

namespace {
// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;
}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* crow = pc + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            const double* brow = pb + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double acc = pc[i * n + j];
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            pc[i * n + j] = acc;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* crow = pc + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[l * m + i];
            const double* brow = pb + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void tile_black_counts(const RgbImage& img, std::size_t p, std::span<std::uint32_t> counts) {
    const std::size_t cols = img.width() / p;
    const std::size_t rows = img.height() / p;
    const std::size_t stride = 3 * img.width();
    const std::uint8_t* base = img.bytes().data();
    const long tiles = static_cast<long>(rows * cols);
#pragma omp parallel for schedule(static)
    for (long t = 0; t < tiles; ++t) {
        const std::size_t x0 = (t % cols) * p;
        const std::size_t y0 = (t / cols) * p;
        std::uint32_t count = 0;
        for (std::size_t y = y0; y < y0 + p; ++y) {
            const std::uint8_t* px = base + y * stride + 3 * x0;
            for (std::size_t x = 0; x < p; ++x, px += 3) {
                count += (px[0] | px[1] | px[2]) == 0;
            }
        }
        counts[t] = count;
    }
}

}  // namespace parallel
}  // namespace patchpad::kernels
