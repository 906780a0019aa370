#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff ops. `serial` is the reference
// implementation; `parallel` splits independent output rows across OpenMP
// threads while keeping each element's reduction order identical, so both
// produce bitwise-equal results.
namespace fsprompt::kernels {

enum class Transpose { none, left, right };

// C (m x n) (+)= op(A) * op(B) where op(A) is m x k and op(B) is k x n.
// `left` means A is stored k x m; `right` means B is stored n x k.
// Every output element accumulates over k in ascending order.
struct GemmArgs {
    std::size_t m = 0, k = 0, n = 0;
    Transpose trans = Transpose::none;
    bool accumulate = false;
};

namespace serial {
void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
// Writes normalized rows to xhat and the per-row inverse standard deviation.
void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std);
}  // namespace parallel

// Dispatchers used by the ops: parallel above the work threshold, serial below.
void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void layer_norm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                     std::span<double> xhat, std::span<double> inv_std);

// Multiply-add count above which the dispatchers go parallel. 0 forces
// parallel for everything; SIZE_MAX forces serial.
void set_parallel_threshold(std::size_t flops);
std::size_t parallel_threshold();
int max_threads();

}  // namespace fsprompt::kernels
