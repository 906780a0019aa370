#include "fsprompt/prompts.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/feature_shift.hpp"
#include "fsprompt/rng.hpp"

namespace fsprompt {

namespace {
constexpr double kPromptInitStd = 0.02;
}

const char* to_string(PromptMode mode) {
    switch (mode) {
    case PromptMode::LPT: return "LPT";
    case PromptMode::VPT: return "VPT";
    case PromptMode::IVLP: return "IVLP";
    }
    return "?";
}

PromptMode parse_prompt_mode(const std::string& text) {
    if (text == "LPT") return PromptMode::LPT;
    if (text == "VPT") return PromptMode::VPT;
    if (text == "IVLP") return PromptMode::IVLP;
    throw ConfigError("unknown prompt mode '" + text + "'");
}

std::vector<Tensor> PromptSet::parameters() const {
    std::vector<Tensor> out;
    for (const auto& t : vision)
        if (t.numel() > 0) out.push_back(t);
    for (const auto& t : text)
        if (t.numel() > 0) out.push_back(t);
    return out;
}

PromptSet init_prompts(std::size_t a, std::size_t b, PromptMode mode, const EncoderConfig& config, std::uint64_t seed) {
    PromptSet set;
    set.mode = mode;
    const std::size_t va = mode == PromptMode::LPT ? 0 : a;
    const std::size_t tb = mode == PromptMode::VPT ? 0 : b;
    Rng vision_rng(seed, 0x7670726f);
    Rng text_rng(seed, 0x7470726f);
    for (std::size_t l = 0; l < config.layers; ++l) {
        set.vision.push_back(vision_rng.normal_tensor({va, config.vision_width}, kPromptInitStd, true));
        set.text.push_back(text_rng.normal_tensor({tb, config.text_width}, kPromptInitStd, true));
    }
    return set;
}

Tensor inject(const Tensor& prompts, const Tensor& x) {
    if (prompts.rows() > 0 && prompts.cols() != x.cols())
        throw ShapeError("inject: prompt width " + std::to_string(prompts.cols()) + " != token width " +
                         std::to_string(x.cols()));
    if (prompts.rows() == 0) return x;
    return ops::concat_rows(prompts, x);
}

Tensor prompted_block_forward(const LayerParams& layer, const Tensor& prompts, const Tensor& x) {
    if (prompts.rows() == 0) return block_forward(layer, x);
    const Tensor out = block_forward(layer, inject(prompts, x));
    return ops::slice_rows(out, prompts.rows(), out.rows());
}

std::vector<double> SampleShifts::norm_values() const {
    std::vector<double> v;
    v.reserve(norms.size());
    for (const auto& n : norms) v.push_back(n.item());
    return v;
}

Tensor encode_with_prompts(const Tensor& input_embedding, std::span<const Tensor> prompts, Tower tower,
                           const BackboneWeights& weights, SampleShifts* sink, const ShiftOptions& shift_options) {
    const auto& layers = weights.tower(tower).layers;
    if (prompts.size() != layers.size())
        throw ShapeError("encode_with_prompts: " + std::to_string(prompts.size()) + " prompt entries for " +
                         std::to_string(layers.size()) + " layers");
    Tensor x = input_embedding;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (sink == nullptr) {
            x = prompted_block_forward(layers[l], prompts[l], x);
            continue;
        }
        ShiftedOutput out = shifted_block(layers[l], prompts[l], x, shift_options);
        sink->norms.push_back(shift_norm(out.shift, shift_options.rms));
        sink->shifts.push_back(std::move(out.shift));
        x = std::move(out.next);
    }
    return pool_and_project(x, tower, weights);
}

}  // namespace fsprompt
