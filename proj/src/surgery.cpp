#include "fsprompt/surgery.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/rng.hpp"

#include <cmath>

namespace fsprompt {

std::vector<Tensor> SurgeryParams::parameters() const {
    return {vision.w_up, vision.w_down, vision.ln_gain, vision.ln_bias,
            text.w_up,   text.w_down,   text.ln_gain,   text.ln_bias};
}

SurgeryParams SurgeryParams::initialize(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed) {
    if (hidden < 1) throw ConfigError("surgery hidden width must be >= 1");
    SurgeryParams p;
    Rng rng(seed, 0x73757267);
    for (SurgeryBranch* b : {&p.vision, &p.text}) {
        b->w_up = rng.normal_tensor({embed_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(embed_dim)), true);
        b->w_down = Tensor::zeros({hidden, embed_dim}, true);
        b->ln_gain = Tensor::filled({1, embed_dim}, 1.0, true);
        b->ln_bias = Tensor::zeros({1, embed_dim}, true);
    }
    return p;
}

namespace {

Tensor adapter(const Tensor& x, const SurgeryBranch& branch, bool bypass_norm) {
    if (x.cols() != branch.w_up.rows())
        throw ShapeError("surgery: feature width " + std::to_string(x.cols()) + " != adapter width " +
                         std::to_string(branch.w_up.rows()));
    const Tensor h = bypass_norm ? x : ops::layer_norm_rows(x, branch.ln_gain, branch.ln_bias);
    return ops::matmul(ops::relu(ops::matmul(h, branch.w_up)), branch.w_down);
}

}  // namespace

Tensor surgery_forward(const Tensor& x, const SurgeryBranch& branch, double alpha, bool bypass_norm) {
    if (alpha < 0.0) throw ConfigError("surgery alpha must be >= 0");
    if (x.cols() != branch.w_up.rows())
        throw ShapeError("surgery: feature width " + std::to_string(x.cols()) + " != adapter width " +
                         std::to_string(branch.w_up.rows()));
    if (alpha == 0.0) return x;
    return ops::add(x, ops::scale(adapter(x, branch, bypass_norm), alpha));
}

Tensor surgery_forward(const Tensor& x, const SurgeryBranch& branch, const Tensor& alpha, bool bypass_norm) {
    if (alpha.numel() != 1) throw ShapeError("surgery: alpha must be 1 x 1");
    if (alpha.item() < 0.0) throw ConfigError("surgery alpha must be >= 0");
    if (alpha.item() == 0.0 && !alpha.requires_grad()) return surgery_forward(x, branch, 0.0, bypass_norm);
    return ops::add(x, ops::mul(adapter(x, branch, bypass_norm), alpha));
}

double compute_alpha(std::span<const double> norms, double gain) {
    if (gain < 0.0) throw ConfigError("surgery gain must be >= 0");
    double total = 0.0;
    for (double n : norms) total += n;
    return gain * total;
}

namespace {

struct SurgeryOutcome {
    Tensor feature;
    double alpha = 0.0;
};

SurgeryOutcome apply_surgery(const Tensor& feature, const SampleShifts* shifts, Tower tower,
                             const SurgeryParams& surgery, const PredictOptions& options) {
    const SurgeryBranch& branch = surgery.branch(tower);
    const double gain = tower == Tower::vision ? surgery.gamma : surgery.beta;
    switch (options.surgery) {
    case SurgeryMode::none:
        return {feature, 0.0};
    case SurgeryMode::fixed: {
        const double alpha = options.fixed_alpha;
        Tensor out = surgery_forward(feature, branch, alpha, surgery.bypass_norm);
        return {alpha == 0.0 ? out : ops::l2_normalize_rows(out), alpha};
    }
    case SurgeryMode::dynamic: {
        if (shifts == nullptr || shifts->norms.empty()) return {feature, 0.0};
        const double alpha = compute_alpha(shifts->norm_values(), gain);
        if (alpha == 0.0) return {feature, 0.0};
        Tensor out;
        if (options.alpha_grad) {
            Tensor total = shifts->norms.front();
            for (std::size_t l = 1; l < shifts->norms.size(); ++l) total = ops::add(total, shifts->norms[l]);
            out = surgery_forward(feature, branch, ops::scale(total, gain), surgery.bypass_norm);
        } else {
            out = surgery_forward(feature, branch, alpha, surgery.bypass_norm);
        }
        return {ops::l2_normalize_rows(out), alpha};
    }
    }
    return {feature, 0.0};
}

}  // namespace

Prediction tuned_predict(std::span<const Tensor> images, std::span<const std::size_t> class_ids,
                         const PromptSet& prompts, const SurgeryParams& surgery, const BackboneWeights& weights,
                         const PredictOptions& options) {
    if (images.empty() || class_ids.empty()) throw ConfigError("tuned_predict: empty batch or class list");
    Prediction pred;
    const bool need_shifts = options.record_shifts || options.surgery == SurgeryMode::dynamic;

    std::vector<Tensor> image_rows;
    image_rows.reserve(images.size());
    const bool vision_prompted = prompts.prompts_tower(Tower::vision);
    for (const auto& img : images) {
        SampleShifts sample;
        SampleShifts* sink = need_shifts && vision_prompted ? &sample : nullptr;
        const Tensor feature =
            encode_with_prompts(embed_image(img, weights), prompts.vision, Tower::vision, weights, sink, options.shift);
        SurgeryOutcome s = apply_surgery(feature, sink, Tower::vision, surgery, options);
        image_rows.push_back(std::move(s.feature));
        pred.alpha_vision.push_back(s.alpha);
        if (sink) pred.shifts.vision.push_back(std::move(sample));
    }

    std::vector<Tensor> class_rows;
    class_rows.reserve(class_ids.size());
    const bool text_prompted = prompts.prompts_tower(Tower::text);
    for (std::size_t c : class_ids) {
        SampleShifts sample;
        SampleShifts* sink = need_shifts && text_prompted ? &sample : nullptr;
        const Tensor feature = encode_with_prompts(embed_text(class_sequence(weights.config(), c), weights),
                                                   prompts.text, Tower::text, weights, sink, options.shift);
        SurgeryOutcome s = apply_surgery(feature, sink, Tower::text, surgery, options);
        class_rows.push_back(std::move(s.feature));
        pred.alpha_text.push_back(s.alpha);
        if (sink) pred.shifts.text.push_back(std::move(sample));
    }

    pred.image_features = stack_rows(image_rows);
    pred.class_features = stack_rows(class_rows);
    const double tau = !options.use_tau ? 1.0 : options.tau > 0.0 ? options.tau : weights.config().tau;
    pred.logits = cosine_logits(pred.image_features, pred.class_features, tau);
    pred.probabilities = ops::softmax_rows(pred.logits);
    return pred;
}

Tensor zero_shot_logits(std::span<const Tensor> images, std::span<const std::size_t> class_ids,
                        const BackboneWeights& weights, bool use_tau) {
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    for (const auto& img : images) rows.push_back(encode_image(img, weights));
    const double tau = use_tau ? weights.config().tau : 1.0;
    return cosine_logits(stack_rows(rows), encode_classes(class_ids, weights), tau);
}

}  // namespace fsprompt
