#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fsprompt {

struct PretrainOptions {
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    std::uint64_t init_seed = 0;
};

struct LabeledImages {
    std::vector<Tensor> images;  // each patches x patch_dim
    std::vector<std::size_t> labels;
};

struct PretrainResult {
    BackboneWeights weights;  // frozen
    std::vector<double> loss_history;
};

// Symmetric in-batch contrastive loss. Row i of `image_features` pairs with
// row i of `text_features`; pairs that share a label are all positives, with
// the target mass split evenly among them.
Tensor contrastive_loss(const Tensor& image_features, const Tensor& text_features,
                        std::span<const std::size_t> labels, double tau);

// Row-wise cross-entropy against a target distribution, averaged over rows.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets);

// SGD-with-momentum buffer per parameter: v = mu*v + g; p -= lr*v.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(std::span<Tensor> params);

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

PretrainResult pretrain_contrastive(const LabeledImages& data, const EncoderConfig& config,
                                    const PretrainOptions& options, std::uint64_t seed);

// Zero-shot accuracy (fraction) over labeled images against the given classes.
double zero_shot_accuracy(const LabeledImages& data, std::span<const std::size_t> class_ids,
                          const BackboneWeights& weights);

}  // namespace fsprompt
