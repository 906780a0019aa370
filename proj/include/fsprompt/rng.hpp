#pragma once

#include "fsprompt/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace fsprompt {

// Seeded generator used everywhere randomness is needed. Distinct streams
// are derived from (seed, stream tag) so that adding a consumer never shifts
// another consumer's draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    double normal(double mean = 0.0, double stddev = 1.0);
    double uniform(double lo = 0.0, double hi = 1.0);
    std::size_t uniform_index(std::size_t n);

    Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        std::shuffle(items.begin(), items.end(), engine_);
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace fsprompt
