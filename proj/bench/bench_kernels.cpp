// Serial vs OpenMP timings for the dense kernels and one encoder pass.
// Usage: bench_kernels [repeats]
#include "fsprompt/encoder.hpp"
#include "fsprompt/kernels.hpp"
#include "fsprompt/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <vector>

using namespace fsprompt;
namespace k = fsprompt::kernels;

namespace {

double best_of(int repeats, const std::function<void()>& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (s < best) best = s;
    }
    return best;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

void row(const char* name, double serial_s, double parallel_s) {
    std::printf("%-28s %12.3f %12.3f %8.2fx\n", name, 1e3 * serial_s, 1e3 * parallel_s, serial_s / parallel_s);
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
    Rng rng(7, 1);
    std::printf("threads: %d\n", k::max_threads());
    std::printf("%-28s %12s %12s %9s\n", "kernel", "serial ms", "parallel ms", "speedup");

    for (std::size_t n : {64, 256, 512}) {
        const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
        std::vector<double> c(n * n);
        const k::GemmArgs args{n, n, n, k::Transpose::none, false};
        char name[64];
        std::snprintf(name, sizeof name, "gemm %zux%zu", n, n);
        row(name, best_of(repeats, [&] { k::serial::gemm(args, a, b, c); }),
            best_of(repeats, [&] { k::parallel::gemm(args, a, b, c); }));
    }

    for (std::size_t rows : {1024, 8192}) {
        const std::size_t cols = 256;
        const auto x = random_vec(rows * cols, rng);
        std::vector<double> y(rows * cols), inv(rows);
        char name[64];
        std::snprintf(name, sizeof name, "softmax_rows %zux%zu", rows, cols);
        row(name, best_of(repeats, [&] { k::serial::softmax_rows(rows, cols, x, y); }),
            best_of(repeats, [&] { k::parallel::softmax_rows(rows, cols, x, y); }));
        std::snprintf(name, sizeof name, "layer_norm_rows %zux%zu", rows, cols);
        row(name, best_of(repeats, [&] { k::serial::layer_norm_rows(rows, cols, 1e-5, x, y, inv); }),
            best_of(repeats, [&] { k::parallel::layer_norm_rows(rows, cols, 1e-5, x, y, inv); }));
    }

    // Full image encode at default toy size through the dispatchers.
    EncoderConfig cfg;
    const BackboneWeights w = BackboneWeights::initialize(cfg, 3);
    const Tensor img = rng.normal_tensor({cfg.patches, cfg.patch_dim}, 1.0, false);
    const auto saved = k::parallel_threshold();
    k::set_parallel_threshold(std::numeric_limits<std::size_t>::max());
    const double s = best_of(repeats, [&] { encode_image(img, w); });
    k::set_parallel_threshold(0);
    const double p = best_of(repeats, [&] { encode_image(img, w); });
    k::set_parallel_threshold(saved);
    row("encode_image (toy)", s, p);
    return 0;
}
