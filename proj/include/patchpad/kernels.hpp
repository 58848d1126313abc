#pragma once

// Dense kernels used by the training engine and the patch pipeline.
//
// Every kernel exists twice: a plain serial reference and an OpenMP
// version that splits work over output rows. Both accumulate each output
// element in the same order, so their results agree bit for bit; the
// tests and the benchmark rely on that.

#include "patchpad/image.hpp"

#include <cstddef>
#include <cstdint>
#include <span>

namespace patchpad::kernels {

namespace serial {

/// c(m x n) += a(m x k) * b(k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
/// c(m x n) += a(m x k) * b(n x k)^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
/// c(m x n) += a(k x m)^T * b(k x n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

/// Number of exact (0,0,0) pixels in each p x p grid tile, row-major over
/// the floor(W/p) x floor(H/p) grid.
void tile_black_counts(const RgbImage& img, std::size_t p, std::span<std::uint32_t> counts);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void tile_black_counts(const RgbImage& img, std::size_t p, std::span<std::uint32_t> counts);

}  // namespace parallel

using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;
using parallel::tile_black_counts;

/// Threads OpenMP will use for the parallel kernels (1 without OpenMP).
int max_threads();

}  // namespace patchpad::kernels
