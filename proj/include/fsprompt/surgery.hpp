#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/feature_shift.hpp"
#include "fsprompt/prompts.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fsprompt {

// Residual adapter on pooled features: LN -> W_up -> ReLU -> W_down.
struct SurgeryBranch {
    Tensor w_up;     // d_e x h
    Tensor w_down;   // h x d_e
    Tensor ln_gain;  // 1 x d_e
    Tensor ln_bias;  // 1 x d_e
};

struct SurgeryParams {
    SurgeryBranch vision;
    SurgeryBranch text;
    double gamma = 0.1;  // vision gain
    double beta = 0.1;   // text gain
    // Test hook: skip the layer norm inside the adapter.
    bool bypass_norm = false;

    std::size_t hidden() const noexcept { return vision.w_up.cols(); }
    const SurgeryBranch& branch(Tower t) const noexcept { return t == Tower::vision ? vision : text; }
    SurgeryBranch& branch(Tower t) noexcept { return t == Tower::vision ? vision : text; }
    std::vector<Tensor> parameters() const;

    // W_up drawn with stddev 1/sqrt(d_e); W_down starts at zero so the adapter
    // is the identity until trained. LN starts at gain 1, bias 0.
    static SurgeryParams initialize(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed);
};

// x + alpha * Surgery(x), row-wise. alpha == 0 returns x itself.
Tensor surgery_forward(const Tensor& x, const SurgeryBranch& branch, double alpha, bool bypass_norm = false);
// Same with alpha as a graph scalar, so gradients reach the shift norms.
Tensor surgery_forward(const Tensor& x, const SurgeryBranch& branch, const Tensor& alpha, bool bypass_norm = false);

// gain * sum of the layer norms.
double compute_alpha(std::span<const double> norms, double gain);

enum class SurgeryMode { none, fixed, dynamic };

struct PredictOptions {
    SurgeryMode surgery = SurgeryMode::dynamic;
    double fixed_alpha = 0.1;
    bool alpha_grad = false;    // route gradients through alpha into the shifts
    bool use_tau = true;        // divide cosine logits by tau
    double tau = 0.0;           // 0 = the backbone's pretraining tau
    bool record_shifts = true;  // evaluate clean branches even without surgery
    ShiftOptions shift;
};

struct Prediction {
    Tensor logits;          // B x K
    Tensor probabilities;   // B x K
    Tensor image_features;  // B x d_e, after surgery
    Tensor class_features;  // K x d_e, after surgery
    ShiftRecord shifts;
    std::vector<double> alpha_vision;  // per image
    std::vector<double> alpha_text;    // per class
};

// Prompted encoding of a batch of images and a set of classes, with shift
// collection, shift-driven surgery on both towers and cosine classification.
Prediction tuned_predict(std::span<const Tensor> images, std::span<const std::size_t> class_ids,
                         const PromptSet& prompts, const SurgeryParams& surgery, const BackboneWeights& weights,
                         const PredictOptions& options = {});

// Prompt-free reference path: zero-shot logits for the same inputs.
Tensor zero_shot_logits(std::span<const Tensor> images, std::span<const std::size_t> class_ids,
                        const BackboneWeights& weights, bool use_tau = true);

}  // namespace fsprompt
