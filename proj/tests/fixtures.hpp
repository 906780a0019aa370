#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/rng.hpp"
#include "fsprompt/run_config.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <filesystem>

namespace fsprompt::testing {

// 2 layers, d_v 8, d_t 6, d_e 4, 2 heads, 2 patches of width 3, m = 1, 4 classes.
EncoderConfig toy_config();

// Random-initialized, frozen. LN parameters are perturbed away from 1/0 so
// their gradients are exercised.
BackboneWeights toy_backbone(std::uint64_t seed = 11);

Tensor random_image(const EncoderConfig& config, Rng& rng, double stddev = 1.0);
Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

// Backbone pretrained with the default run config. Built once and cached
// under the build tree so every test binary shares it.
const BackboneWeights& default_backbone();

std::filesystem::path fixture_dir();
std::filesystem::path scratch_dir(const std::string& name);  // fresh, empty

}  // namespace fsprompt::testing
