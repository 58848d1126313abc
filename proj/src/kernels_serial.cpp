#include "patchpad/kernels.hpp"

namespace patchpad::kernels::serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = c[i * n + j];
            for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
            c[i * n + j] = acc;
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = c[i * n + j];
            for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
            c[i * n + j] = acc;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = c[i * n + j];
            for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[l * n + j];
            c[i * n + j] = acc;
        }
    }
}

void tile_black_counts(const RgbImage& img, std::size_t p, std::span<std::uint32_t> counts) {
    const std::size_t cols = img.width() / p;
    const std::size_t rows = img.height() / p;
    for (std::size_t t = 0; t < rows * cols; ++t) {
        const std::size_t x0 = (t % cols) * p;
        const std::size_t y0 = (t / cols) * p;
        std::uint32_t count = 0;
        for (std::size_t y = y0; y < y0 + p; ++y) {
            for (std::size_t x = x0; x < x0 + p; ++x) {
                if (img.at(x, y) == Rgb{0, 0, 0}) ++count;
            }
        }
        counts[t] = count;
    }
}

}  // namespace patchpad::kernels::serial
