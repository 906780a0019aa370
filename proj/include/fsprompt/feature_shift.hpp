#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/prompts.hpp"
#include "fsprompt/tensor.hpp"

#include <cstddef>
#include <vector>

namespace fsprompt {

struct ShiftedOutput {
    Tensor next;   // prompted block output, prompt rows removed
    Tensor shift;  // next minus the clean block applied to the same input
};

// One layer of the prompted trunk plus its counterfactual clean branch.
ShiftedOutput shifted_block(const LayerParams& layer, const Tensor& prompts, const Tensor& x,
                            const ShiftOptions& options = {});

// Frobenius norm of a shift (1 x 1), optionally divided by sqrt(numel).
Tensor shift_norm(const Tensor& shift, bool rms = false);

// (Norm(vision) - Norm(text))^2. Shapes may differ between modalities.
Tensor fs_layer_loss(const Tensor& vision_shift, const Tensor& text_shift, bool rms = false);

// Shifts gathered over one forward pass. Each modality holds one entry per
// encoded sample (images in the batch, class prompts on the text side); a
// modality without prompts in the current mode stays empty.
struct ShiftRecord {
    std::size_t step = 0;
    std::vector<SampleShifts> vision;
    std::vector<SampleShifts> text;

    std::size_t layers() const;
    // Batch mean of per-sample norms at one layer, as a graph scalar.
    Tensor layer_norm(Tower tower, std::size_t layer) const;
    // Same, as plain values for every layer.
    std::vector<double> layer_norm_values(Tower tower) const;
};

// Sum over layers of the per-layer consistency loss on batch-mean norms.
// Throws when either modality has no recorded shifts.
Tensor fs_total_loss(const ShiftRecord& record);

}  // namespace fsprompt
