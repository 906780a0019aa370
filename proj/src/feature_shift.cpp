#include "fsprompt/feature_shift.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"

#include <cmath>

namespace fsprompt {

ShiftedOutput shifted_block(const LayerParams& layer, const Tensor& prompts, const Tensor& x,
                            const ShiftOptions& options) {
    if (prompts.rows() == 0) {
        // No learnable tokens at this layer: the two branches coincide.
        return {block_forward(layer, x), Tensor::zeros(x.shape())};
    }
    Tensor next = prompted_block_forward(layer, prompts, x);
    const Tensor clean = block_forward(layer, options.stop_clean_grad ? x.detached() : x);
    Tensor shift = ops::sub(next, clean);
    return {std::move(next), std::move(shift)};
}

Tensor shift_norm(const Tensor& shift, bool rms) {
    const Tensor n = ops::frobenius_norm(shift);
    if (!rms || shift.numel() == 0) return n;
    return ops::scale(n, 1.0 / std::sqrt(static_cast<double>(shift.numel())));
}

Tensor fs_layer_loss(const Tensor& vision_shift, const Tensor& text_shift, bool rms) {
    return ops::square(ops::sub(shift_norm(vision_shift, rms), shift_norm(text_shift, rms)));
}

std::size_t ShiftRecord::layers() const {
    if (!vision.empty()) return vision.front().norms.size();
    if (!text.empty()) return text.front().norms.size();
    return 0;
}

Tensor ShiftRecord::layer_norm(Tower tower, std::size_t layer) const {
    const auto& samples = tower == Tower::vision ? vision : text;
    if (samples.empty()) throw GraphError(std::string("no ") + to_string(tower) + " shifts recorded");
    if (samples.size() == 1) return samples.front().norms.at(layer);
    Tensor total = samples.front().norms.at(layer);
    for (std::size_t i = 1; i < samples.size(); ++i) total = ops::add(total, samples[i].norms.at(layer));
    return ops::scale(total, 1.0 / static_cast<double>(samples.size()));
}

std::vector<double> ShiftRecord::layer_norm_values(Tower tower) const {
    const auto& samples = tower == Tower::vision ? vision : text;
    std::vector<double> out(layers(), 0.0);
    if (samples.empty()) return out;
    for (const auto& s : samples)
        for (std::size_t l = 0; l < out.size(); ++l) out[l] += s.norms[l].item();
    for (double& v : out) v /= static_cast<double>(samples.size());
    return out;
}

Tensor fs_total_loss(const ShiftRecord& record) {
    if (record.vision.empty() || record.text.empty())
        throw ConfigError("fs loss requires both modalities");
    const std::size_t layers = record.vision.front().norms.size();
    if (record.text.front().norms.size() != layers)
        throw ShapeError("fs loss: modalities recorded different layer counts");
    Tensor total;
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor term = ops::square(ops::sub(record.layer_norm(Tower::vision, l), record.layer_norm(Tower::text, l)));
        total = l == 0 ? term : ops::add(total, term);
    }
    return total;
}

}  // namespace fsprompt
