#include "fsprompt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fsprompt::kernels {

namespace {

std::atomic<std::size_t> g_threshold{1u << 16};

// One output row of the product. Shared by both backends so the per-element
// reduction order cannot drift between them.
inline void gemm_row(const GemmArgs& g, const double* a, const double* b, double* c, std::size_t i) {
    double* crow = c + i * g.n;
    switch (g.trans) {
    case Transpose::none: {
        if (!g.accumulate) std::fill(crow, crow + g.n, 0.0);
        const double* arow = a + i * g.k;
        for (std::size_t p = 0; p < g.k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * g.n;
            for (std::size_t j = 0; j < g.n; ++j) crow[j] += av * brow[j];
        }
        break;
    }
    case Transpose::left: {
        if (!g.accumulate) std::fill(crow, crow + g.n, 0.0);
        for (std::size_t p = 0; p < g.k; ++p) {
            const double av = a[p * g.m + i];
            const double* brow = b + p * g.n;
            for (std::size_t j = 0; j < g.n; ++j) crow[j] += av * brow[j];
        }
        break;
    }
    case Transpose::right: {
        const double* arow = a + i * g.k;
        for (std::size_t j = 0; j < g.n; ++j) {
            const double* brow = b + j * g.k;
            double s = 0.0;
            for (std::size_t p = 0; p < g.k; ++p) s += arow[p] * brow[p];
            crow[j] = g.accumulate ? crow[j] + s : s;
        }
        break;
    }
    }
}

inline void softmax_row(std::size_t cols, const double* x, double* y) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        total += y[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(std::size_t cols, double eps, const double* x, double* xhat, double* inv_std) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        const double d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    *inv_std = is;
    for (std::size_t j = 0; j < cols; ++j) xhat[j] = (x[j] - mean) * is;
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    for (std::size_t i = 0; i < args.m; ++i) gemm_row(args, a.data(), b.data(), c.data(), i);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x.data() + r * cols, y.data() + r * cols);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std) {
    for (std::size_t r = 0; r < rows; ++r)
        layer_norm_row(cols, eps, x.data() + r * cols, xhat.data() + r * cols, inv_std.data() + r);
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    const auto m = static_cast<std::ptrdiff_t>(args.m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i)
        gemm_row(args, a.data(), b.data(), c.data(), static_cast<std::size_t>(i));
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r)
        softmax_row(cols, x.data() + r * cols, y.data() + r * cols);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r)
        layer_norm_row(cols, eps, x.data() + r * cols, xhat.data() + r * cols, inv_std.data() + r);
}

}  // namespace parallel

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b, std::span<double> c) {
    if (args.m * args.k * args.n >= parallel_threshold() && args.m > 1)
        parallel::gemm(args, a, b, c);
    else
        serial::gemm(args, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    if (rows * cols * 8 >= parallel_threshold() && rows > 1)
        parallel::softmax_rows(rows, cols, x, y);
    else
        serial::softmax_rows(rows, cols, x, y);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std) {
    if (rows * cols * 8 >= parallel_threshold() && rows > 1)
        parallel::layer_norm_rows(rows, cols, eps, x, xhat, inv_std);
    else
        serial::layer_norm_rows(rows, cols, eps, x, xhat, inv_std);
}

void set_parallel_threshold(std::size_t flops) { g_threshold.store(flops); }
std::size_t parallel_threshold() { return g_threshold.load(); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace fsprompt::kernels
