#pragma once

#include "fsprompt/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fsprompt {

// Dimensions of the two-tower model. Text vocabulary layout: ids
// [0, template_tokens) are template words, `eot_id()` ends every sequence,
// and class c owns id `class_token_id(c)`.
struct EncoderConfig {
    std::size_t layers = 4;
    std::size_t vision_width = 48;
    std::size_t text_width = 32;
    std::size_t embed_dim = 16;
    std::size_t heads = 4;
    std::size_t patches = 16;
    std::size_t patch_dim = 4;
    std::size_t template_tokens = 4;
    std::size_t classes = 10;
    std::size_t class_capacity = 64;
    double tau = 0.07;

    void validate() const;

    std::size_t vision_tokens() const noexcept { return patches + 1; }
    std::size_t text_tokens() const noexcept { return template_tokens + 2; }
    std::size_t eot_id() const noexcept { return template_tokens; }
    std::size_t class_token_id(std::size_t class_index) const noexcept { return template_tokens + 1 + class_index; }

    bool operator==(const EncoderConfig&) const = default;
    std::size_t vocab_size() const noexcept { return template_tokens + 1 + class_capacity; }
};

enum class Tower { vision, text };

const char* to_string(Tower tower);

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    // Per-head projections: width x head_dim for q/k/v, head_dim x width for o.
    std::vector<Tensor> wq, wk, wv, wo;
    Tensor bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;  // width x 4*width
    Tensor w2, b2;  // 4*width x width

    std::size_t width() const noexcept { return ln1_gain.cols(); }
    std::size_t heads() const noexcept { return wq.size(); }

    static LayerParams zeros(std::size_t width, std::size_t heads);
};

struct TowerWeights {
    // Vision: patch_dim x width patch embedding. Text: vocab x width token table.
    Tensor input_embed;
    Tensor positions;  // tokens x width
    Tensor cls_token;  // 1 x width for vision, 0 x width for text
    std::vector<LayerParams> layers;
    Tensor projection;  // width x embed_dim

    std::size_t width() const noexcept { return positions.cols(); }
};

class BackboneWeights {
public:
    BackboneWeights() = default;

    static BackboneWeights initialize(const EncoderConfig& config, std::uint64_t seed);
    static BackboneWeights zeros(const EncoderConfig& config);

    const EncoderConfig& config() const noexcept { return config_; }
    TowerWeights& tower(Tower t) noexcept { return t == Tower::vision ? vision_ : text_; }
    const TowerWeights& tower(Tower t) const noexcept { return t == Tower::vision ? vision_ : text_; }

    // Frozen weights carry no gradient slot.
    void freeze();
    void unfreeze();
    bool frozen() const noexcept { return frozen_; }

    // Stable (name, tensor) listing, used by the optimizer and checkpoints.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    BackboneWeights deep_copy() const;

private:
    friend class BackboneBuilder;
    EncoderConfig config_;
    TowerWeights vision_;
    TowerWeights text_;
    bool frozen_ = false;
};

// Token id sequence {t1..tm, class token, eot} for one class.
std::vector<std::size_t> class_sequence(const EncoderConfig& config, std::size_t class_index);

// (n+1) x d_v: class token row then patch embeddings, each plus its position.
Tensor embed_image(const Tensor& patches, const BackboneWeights& weights);
// (m+2) x d_t: token-table rows plus positions.
Tensor embed_text(std::span<const std::size_t> token_ids, const BackboneWeights& weights);

// Pre-LN multi-head self-attention then pre-LN ReLU MLP, both residual.
Tensor block_forward(const LayerParams& layer, const Tensor& x);

// Selects the pooling row (class token for vision, end token for text),
// projects to the shared space and L2-normalizes. Returns 1 x d_e.
Tensor pool_and_project(const Tensor& encoded, Tower tower, const BackboneWeights& weights);

// Prompt-free encoders.
Tensor encode_image(const Tensor& patches, const BackboneWeights& weights);
Tensor encode_text(std::span<const std::size_t> token_ids, const BackboneWeights& weights);
Tensor encode_classes(std::span<const std::size_t> class_ids, const BackboneWeights& weights);

// Cosine-similarity logits: rows of x against rows of w, divided by tau.
Tensor cosine_logits(const Tensor& x, const Tensor& w, double tau);
// Zero-shot class probabilities (1 x K) for a single image feature.
Tensor classify(const Tensor& x, const Tensor& class_features, double tau);

// Stacks 1 x d rows into an r x d matrix.
Tensor stack_rows(std::span<const Tensor> rows);

}  // namespace fsprompt
