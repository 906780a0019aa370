#include "fsprompt/encoder.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/rng.hpp"

#include <cmath>

namespace fsprompt {

void EncoderConfig::validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (heads < 1 || vision_width % heads != 0 || text_width % heads != 0)
        throw ConfigError("vision_width and text_width must be divisible by heads");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (patches < 1) throw ConfigError("patches must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (classes > class_capacity) throw ConfigError("classes exceed the synthetic vocabulary capacity");
    if (embed_dim < 1 || patch_dim < 1) throw ConfigError("embed_dim and patch_dim must be >= 1");
}

const char* to_string(Tower tower) { return tower == Tower::vision ? "vision" : "text"; }

LayerParams LayerParams::zeros(std::size_t width, std::size_t heads) {
    const std::size_t hd = width / heads;
    LayerParams p;
    p.ln1_gain = Tensor::filled({1, width}, 1.0);
    p.ln1_bias = Tensor::zeros({1, width});
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(Tensor::zeros({width, hd}));
        p.wk.push_back(Tensor::zeros({width, hd}));
        p.wv.push_back(Tensor::zeros({width, hd}));
        p.wo.push_back(Tensor::zeros({hd, width}));
    }
    p.bo = Tensor::zeros({1, width});
    p.ln2_gain = Tensor::filled({1, width}, 1.0);
    p.ln2_bias = Tensor::zeros({1, width});
    p.w1 = Tensor::zeros({width, 4 * width});
    p.b1 = Tensor::zeros({1, 4 * width});
    p.w2 = Tensor::zeros({4 * width, width});
    p.b2 = Tensor::zeros({1, width});
    return p;
}

class BackboneBuilder {
public:
    static TowerWeights zero_tower(const EncoderConfig& c, Tower t) {
        TowerWeights w;
        const std::size_t width = t == Tower::vision ? c.vision_width : c.text_width;
        const std::size_t tokens = t == Tower::vision ? c.vision_tokens() : c.text_tokens();
        w.input_embed = Tensor::zeros({t == Tower::vision ? c.patch_dim : c.vocab_size(), width});
        w.positions = Tensor::zeros({tokens, width});
        w.cls_token = Tensor::zeros({t == Tower::vision ? std::size_t{1} : std::size_t{0}, width});
        for (std::size_t l = 0; l < c.layers; ++l) w.layers.push_back(LayerParams::zeros(width, c.heads));
        w.projection = Tensor::zeros({width, c.embed_dim});
        return w;
    }

    static void randomize(TowerWeights& w, const EncoderConfig& c, Rng& rng) {
        const std::size_t width = w.width();
        const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));
        auto fill = [&](Tensor& t, double stddev) {
            for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
        };
        fill(w.input_embed, w.cls_token.rows() == 1 ? 1.0 / std::sqrt(static_cast<double>(c.patch_dim)) : 1.0);
        fill(w.positions, 0.1);
        fill(w.cls_token, 1.0);
        const double in_std = 1.0 / std::sqrt(static_cast<double>(width));
        for (auto& layer : w.layers) {
            const double hd = static_cast<double>(width / c.heads);
            for (std::size_t h = 0; h < layer.heads(); ++h) {
                fill(layer.wq[h], in_std);
                fill(layer.wk[h], in_std);
                fill(layer.wv[h], in_std);
                fill(layer.wo[h], depth_scale / std::sqrt(hd * static_cast<double>(c.heads)));
            }
            fill(layer.w1, in_std);
            fill(layer.w2, depth_scale / std::sqrt(4.0 * static_cast<double>(width)));
        }
        fill(w.projection, in_std);
    }

    static BackboneWeights build(const EncoderConfig& c) {
        BackboneWeights b;
        b.config_ = c;
        b.vision_ = zero_tower(c, Tower::vision);
        b.text_ = zero_tower(c, Tower::text);
        return b;
    }
};

BackboneWeights BackboneWeights::zeros(const EncoderConfig& config) {
    config.validate();
    return BackboneBuilder::build(config);
}

BackboneWeights BackboneWeights::initialize(const EncoderConfig& config, std::uint64_t seed) {
    BackboneWeights b = zeros(config);
    Rng vision_rng(seed, 0x76697331);
    Rng text_rng(seed, 0x74787431);
    BackboneBuilder::randomize(b.vision_, config, vision_rng);
    BackboneBuilder::randomize(b.text_, config, text_rng);
    return b;
}

namespace {

template <typename Tw, typename Fn>
void visit_tower(Tw& tw, const std::string& prefix, Fn&& fn) {
    fn(prefix + "/input_embed", tw.input_embed);
    fn(prefix + "/positions", tw.positions);
    fn(prefix + "/cls_token", tw.cls_token);
    for (std::size_t l = 0; l < tw.layers.size(); ++l) {
        auto& L = tw.layers[l];
        const std::string p = prefix + "/layer" + std::to_string(l);
        fn(p + "/ln1_gain", L.ln1_gain);
        fn(p + "/ln1_bias", L.ln1_bias);
        for (std::size_t h = 0; h < L.wq.size(); ++h) {
            const std::string hp = p + "/head" + std::to_string(h);
            fn(hp + "/wq", L.wq[h]);
            fn(hp + "/wk", L.wk[h]);
            fn(hp + "/wv", L.wv[h]);
            fn(hp + "/wo", L.wo[h]);
        }
        fn(p + "/bo", L.bo);
        fn(p + "/ln2_gain", L.ln2_gain);
        fn(p + "/ln2_bias", L.ln2_bias);
        fn(p + "/w1", L.w1);
        fn(p + "/b1", L.b1);
        fn(p + "/w2", L.w2);
        fn(p + "/b2", L.b2);
    }
    fn(prefix + "/projection", tw.projection);
}

}  // namespace

void BackboneWeights::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_tower(vision_, "vision", fn);
    visit_tower(text_, "text", fn);
}

void BackboneWeights::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    visit_tower(vision_, "vision", fn);
    visit_tower(text_, "text", fn);
}

void BackboneWeights::freeze() {
    for_each([](const std::string&, Tensor& t) { t.set_requires_grad(false); });
    frozen_ = true;
}

void BackboneWeights::unfreeze() {
    for_each([](const std::string&, Tensor& t) { t.set_requires_grad(true); });
    frozen_ = false;
}

BackboneWeights BackboneWeights::deep_copy() const {
    BackboneWeights copy = BackboneBuilder::build(config_);
    std::vector<Tensor> sources;
    for_each([&](const std::string&, const Tensor& t) { sources.push_back(t); });
    std::size_t i = 0;
    copy.for_each([&](const std::string&, Tensor& t) {
        const Tensor& src = sources[i++];
        t = src.clone(src.requires_grad());
    });
    copy.frozen_ = frozen_;
    return copy;
}

std::vector<std::size_t> class_sequence(const EncoderConfig& config, std::size_t class_index) {
    if (class_index >= config.class_capacity) throw ConfigError("class index beyond vocabulary capacity");
    std::vector<std::size_t> ids;
    ids.reserve(config.text_tokens());
    for (std::size_t t = 0; t < config.template_tokens; ++t) ids.push_back(t);
    ids.push_back(config.class_token_id(class_index));
    ids.push_back(config.eot_id());
    return ids;
}

Tensor embed_image(const Tensor& patches, const BackboneWeights& weights) {
    const auto& c = weights.config();
    const auto& tw = weights.tower(Tower::vision);
    if (patches.rows() != c.patches || patches.cols() != c.patch_dim)
        throw ShapeError("embed_image: expected patches " + Shape{c.patches, c.patch_dim}.str() + ", got " +
                         patches.shape().str());
    const Tensor tokens = ops::concat_rows(tw.cls_token, ops::matmul(patches, tw.input_embed));
    return ops::add(tokens, tw.positions);
}

Tensor embed_text(std::span<const std::size_t> token_ids, const BackboneWeights& weights) {
    const auto& c = weights.config();
    const auto& tw = weights.tower(Tower::text);
    if (token_ids.size() != c.text_tokens())
        throw ShapeError("embed_text: expected " + std::to_string(c.text_tokens()) + " tokens, got " +
                         std::to_string(token_ids.size()));
    const std::size_t vocab = c.vocab_size();
    std::vector<double> onehot(token_ids.size() * vocab, 0.0);
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (token_ids[i] >= vocab)
            throw ConfigError("embed_text: token id " + std::to_string(token_ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
        onehot[i * vocab + token_ids[i]] = 1.0;
    }
    const Tensor selector({token_ids.size(), vocab}, std::move(onehot));
    return ops::add(ops::matmul(selector, tw.input_embed), tw.positions);
}

Tensor block_forward(const LayerParams& layer, const Tensor& x) {
    const std::size_t width = layer.width();
    if (x.cols() != width)
        throw ShapeError("block_forward: token width " + std::to_string(x.cols()) + " != layer width " +
                         std::to_string(width));
    const std::size_t hd = width / layer.heads();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    const Tensor h = ops::layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias);
    Tensor attn;
    for (std::size_t i = 0; i < layer.heads(); ++i) {
        const Tensor q = ops::matmul(h, layer.wq[i]);
        const Tensor k = ops::matmul(h, layer.wk[i]);
        const Tensor v = ops::matmul(h, layer.wv[i]);
        const Tensor p = ops::softmax_rows(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt));
        const Tensor head_out = ops::matmul(ops::matmul(p, v), layer.wo[i]);
        attn = i == 0 ? head_out : ops::add(attn, head_out);
    }
    const Tensor x1 = ops::add(x, ops::add(attn, layer.bo));

    const Tensor h2 = ops::layer_norm_rows(x1, layer.ln2_gain, layer.ln2_bias);
    const Tensor hidden = ops::relu(ops::add(ops::matmul(h2, layer.w1), layer.b1));
    const Tensor mlp = ops::add(ops::matmul(hidden, layer.w2), layer.b2);
    return ops::add(x1, mlp);
}

Tensor pool_and_project(const Tensor& encoded, Tower tower, const BackboneWeights& weights) {
    if (encoded.rows() == 0) throw ShapeError("pool_and_project: empty token matrix");
    const auto& tw = weights.tower(tower);
    const std::size_t row = tower == Tower::vision ? 0 : encoded.rows() - 1;
    const Tensor pooled = ops::slice_rows(encoded, row, row + 1);
    return ops::l2_normalize_rows(ops::matmul(pooled, tw.projection));
}

Tensor encode_image(const Tensor& patches, const BackboneWeights& weights) {
    Tensor x = embed_image(patches, weights);
    for (const auto& layer : weights.tower(Tower::vision).layers) x = block_forward(layer, x);
    return pool_and_project(x, Tower::vision, weights);
}

Tensor encode_text(std::span<const std::size_t> token_ids, const BackboneWeights& weights) {
    Tensor x = embed_text(token_ids, weights);
    for (const auto& layer : weights.tower(Tower::text).layers) x = block_forward(layer, x);
    return pool_and_project(x, Tower::text, weights);
}

Tensor encode_classes(std::span<const std::size_t> class_ids, const BackboneWeights& weights) {
    std::vector<Tensor> rows;
    rows.reserve(class_ids.size());
    for (std::size_t c : class_ids) rows.push_back(encode_text(class_sequence(weights.config(), c), weights));
    return stack_rows(rows);
}

Tensor cosine_logits(const Tensor& x, const Tensor& w, double tau) {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (x.cols() != w.cols()) throw ShapeError("cosine_logits: feature widths differ");
    const Tensor xn = ops::l2_normalize_rows(x);
    const Tensor wn = ops::l2_normalize_rows(w);
    return ops::scale(ops::matmul(xn, ops::transpose(wn)), 1.0 / tau);
}

Tensor classify(const Tensor& x, const Tensor& class_features, double tau) {
    if (x.rows() != 1) throw ShapeError("classify: expects a single 1 x d feature");
    return ops::softmax_rows(cosine_logits(x, class_features, tau));
}

Tensor stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows");
    // Pairwise merge keeps the copy volume at n log n.
    std::vector<Tensor> level(rows.begin(), rows.end());
    while (level.size() > 1) {
        std::vector<Tensor> next;
        next.reserve((level.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(ops::concat_rows(level[i], level[i + 1]));
        if (level.size() % 2 == 1) next.push_back(level.back());
        level = std::move(next);
    }
    return level.front();
}

}  // namespace fsprompt
