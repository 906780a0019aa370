#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsprompt {

// LPT: text prompts only. VPT: vision prompts only. IVLP: both, independent.
enum class PromptMode { LPT, VPT, IVLP };

const char* to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& text);

// Fresh learnable tokens for every layer of both towers.
struct PromptSet {
    PromptMode mode = PromptMode::IVLP;
    std::vector<Tensor> vision;  // L entries, a x d_v (0 rows under LPT)
    std::vector<Tensor> text;    // L entries, b x d_t (0 rows under VPT)

    const std::vector<Tensor>& tower(Tower t) const noexcept { return t == Tower::vision ? vision : text; }
    bool prompts_tower(Tower t) const noexcept {
        return t == Tower::vision ? mode != PromptMode::LPT : mode != PromptMode::VPT;
    }
    std::vector<Tensor> parameters() const;
};

PromptSet init_prompts(std::size_t a, std::size_t b, PromptMode mode, const EncoderConfig& config, std::uint64_t seed);

// Prompts first, then the original tokens.
Tensor inject(const Tensor& prompts, const Tensor& x);

// Runs the block on [prompts; x] and drops the rows at prompt positions.
Tensor prompted_block_forward(const LayerParams& layer, const Tensor& prompts, const Tensor& x);

struct ShiftOptions {
    bool rms = false;             // divide norms by sqrt(numel)
    bool stop_clean_grad = false;  // detach the layer input of the clean branch
};

// Per-layer shifts of one encoded sample, with their norms as graph scalars.
struct SampleShifts {
    std::vector<Tensor> shifts;
    std::vector<Tensor> norms;

    std::vector<double> norm_values() const;
};

// Encodes an embedded token matrix through every layer with that layer's
// prompts, then pools and projects. When `sink` is given, each layer also
// evaluates the prompt-free counterfactual and records the shift there.
Tensor encode_with_prompts(const Tensor& input_embedding, std::span<const Tensor> prompts, Tower tower,
                           const BackboneWeights& weights, SampleShifts* sink = nullptr,
                           const ShiftOptions& shift_options = {});

}  // namespace fsprompt
