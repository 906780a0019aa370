#include "fsprompt/pretrain.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/rng.hpp"

#include <algorithm>
#include <cmath>

namespace fsprompt {

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape())
        throw ShapeError("soft_cross_entropy: logits " + logits.shape().str() + " vs targets " + targets.shape().str());
    const Tensor log_probs = ops::log(ops::softmax_rows(logits));
    return ops::scale(ops::sum(ops::mul(targets, log_probs)), -1.0 / static_cast<double>(logits.rows()));
}

Tensor contrastive_loss(const Tensor& image_features, const Tensor& text_features,
                        std::span<const std::size_t> labels, double tau) {
    const std::size_t b = image_features.rows();
    if (b < 2) throw ConfigError("contrastive loss needs a batch of at least 2 (no negatives otherwise)");
    if (text_features.rows() != b || labels.size() != b)
        throw ShapeError("contrastive_loss: batch sizes differ");
    std::vector<double> targets(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t positives = 0;
        for (std::size_t j = 0; j < b; ++j) positives += labels[i] == labels[j] ? 1 : 0;
        for (std::size_t j = 0; j < b; ++j)
            if (labels[i] == labels[j]) targets[i * b + j] = 1.0 / static_cast<double>(positives);
    }
    // The target matrix is symmetric, so it serves both directions.
    const Tensor target({b, b}, std::move(targets));
    const Tensor logits = cosine_logits(image_features, text_features, tau);
    const Tensor i2t = soft_cross_entropy(logits, target);
    const Tensor t2i = soft_cross_entropy(ops::transpose(logits), target);
    return ops::scale(ops::add(i2t, t2i), 0.5);
}

void SgdMomentum::step(std::span<Tensor> params) {
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (const auto& p : params) velocity_.emplace_back(p.numel(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        auto values = p.mutable_data();
        const auto grad = p.grad();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            v[j] = momentum_ * v[j] + grad[j];
            values[j] -= lr_ * v[j];
        }
        p.zero_grad();
    }
}

PretrainResult pretrain_contrastive(const LabeledImages& data, const EncoderConfig& config,
                                    const PretrainOptions& options, std::uint64_t seed) {
    config.validate();
    if (options.batch_size < 2) throw ConfigError("pretraining batch size must be >= 2 (no negatives otherwise)");
    if (data.images.size() != data.labels.size() || data.images.empty())
        throw ConfigError("pretraining data is empty or mislabeled");
    std::vector<bool> seen(config.classes, false);
    for (std::size_t y : data.labels) {
        if (y >= config.classes) throw ConfigError("pretraining label outside class range");
        seen[y] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw ConfigError("pretraining data must cover every class");

    PretrainResult result{BackboneWeights::initialize(config, options.init_seed), {}};
    BackboneWeights& weights = result.weights;
    weights.unfreeze();
    std::vector<Tensor> params;
    weights.for_each([&](const std::string&, Tensor& t) { params.push_back(t); });

    SgdMomentum opt(options.lr, options.momentum);
    Rng rng(seed, 0x70726574);
    std::vector<std::size_t> all_classes(config.classes);
    for (std::size_t c = 0; c < config.classes; ++c) all_classes[c] = c;

    result.loss_history.reserve(options.steps);
    for (std::size_t step = 0; step < options.steps; ++step) {
        std::vector<std::size_t> batch(options.batch_size);
        for (auto& idx : batch) idx = rng.uniform_index(data.images.size());

        Graph graph;
        GraphScope scope(graph);
        std::vector<Tensor> image_rows;
        std::vector<std::size_t> labels;
        for (std::size_t idx : batch) {
            image_rows.push_back(encode_image(data.images[idx], weights));
            labels.push_back(data.labels[idx]);
        }
        // Encode each class once and gather per batch entry with a one-hot map.
        const Tensor class_features = encode_classes(all_classes, weights);
        std::vector<double> gather(options.batch_size * config.classes, 0.0);
        for (std::size_t i = 0; i < labels.size(); ++i) gather[i * config.classes + labels[i]] = 1.0;
        const Tensor text_rows = ops::matmul(Tensor({options.batch_size, config.classes}, std::move(gather)), class_features);

        const Tensor loss = contrastive_loss(stack_rows(image_rows), text_rows, labels, config.tau);
        if (!std::isfinite(loss.item())) throw Error("non_finite_loss", "pretraining loss became non-finite at step " + std::to_string(step));
        result.loss_history.push_back(loss.item());
        graph.backward(loss);
        opt.step(params);
    }
    weights.freeze();
    return result;
}

double zero_shot_accuracy(const LabeledImages& data, std::span<const std::size_t> class_ids,
                          const BackboneWeights& weights) {
    if (data.images.empty()) throw ConfigError("zero_shot_accuracy: empty data");
    const Tensor classes = encode_classes(class_ids, weights);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const Tensor logits = cosine_logits(encode_image(data.images[i], weights), classes, weights.config().tau);
        const auto row = logits.data();
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += class_ids[best] == data.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

}  // namespace fsprompt
