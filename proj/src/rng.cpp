#include "fsprompt/rng.hpp"

#include <algorithm>

namespace fsprompt {

namespace {
// splitmix64 finalizer; decorrelates neighbouring (seed, stream) pairs.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(mix(seed ^ mix(stream))) {}

double Rng::normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

double Rng::uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

std::size_t Rng::uniform_index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

Tensor Rng::normal_tensor(Shape shape, double stddev, bool requires_grad) {
    std::vector<double> data(shape.numel());
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : data) v = dist(engine_);
    return Tensor(shape, std::move(data), requires_grad);
}

}  // namespace fsprompt
