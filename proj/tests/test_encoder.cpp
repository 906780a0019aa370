#include "doctest.h"
#include "fixtures.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/dataset.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/pretrain.hpp"

#include <cmath>

using namespace fsprompt;
using namespace fsprompt::testing;

namespace {

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= tol);
}

Tensor identity(std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) t.mutable_data()[i * cols + i] = 1.0;
    return t;
}

// Scalar reference for a pre-LN block on one token: attention over a
// single key is the identity on values.
std::vector<double> one_token_block(const LayerParams& L, std::vector<double> x) {
    const std::size_t w = x.size();
    auto ln = [&](const std::vector<double>& v, const Tensor& g, const Tensor& b) {
        double m = 0, var = 0;
        for (double e : v) m += e;
        m /= static_cast<double>(w);
        for (double e : v) var += (e - m) * (e - m);
        var /= static_cast<double>(w);
        std::vector<double> out(w);
        for (std::size_t i = 0; i < w; ++i) out[i] = (v[i] - m) / std::sqrt(var + 1e-5) * g.data()[i] + b.data()[i];
        return out;
    };
    auto vecmat = [](const std::vector<double>& v, const Tensor& m) {
        std::vector<double> out(m.cols(), 0.0);
        for (std::size_t j = 0; j < m.cols(); ++j)
            for (std::size_t i = 0; i < v.size(); ++i) out[j] += v[i] * m.at(i, j);
        return out;
    };
    const auto h = ln(x, L.ln1_gain, L.ln1_bias);
    std::vector<double> x1 = x;
    for (std::size_t head = 0; head < L.heads(); ++head) {
        const auto o = vecmat(vecmat(h, L.wv[head]), L.wo[head]);
        for (std::size_t i = 0; i < w; ++i) x1[i] += o[i];
    }
    for (std::size_t i = 0; i < w; ++i) x1[i] += L.bo.data()[i];
    const auto h2 = ln(x1, L.ln2_gain, L.ln2_bias);
    auto hid = vecmat(h2, L.w1);
    for (std::size_t i = 0; i < hid.size(); ++i) hid[i] = std::max(0.0, hid[i] + L.b1.data()[i]);
    const auto mlp = vecmat(hid, L.w2);
    for (std::size_t i = 0; i < w; ++i) x1[i] += mlp[i] + L.b2.data()[i];
    return x1;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig c;
    CHECK_NOTHROW(c.validate());
    c.heads = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.classes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.classes = c.class_capacity + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("embed_image") {
    EncoderConfig c = toy_config();
    SUBCASE("zero patches, zero weights") {
        BackboneWeights w = BackboneWeights::zeros(c);
        w.tower(Tower::vision).cls_token.mutable_data()[0] = 2.5;
        const Tensor e = embed_image(Tensor::zeros({c.patches, c.patch_dim}), w);
        CHECK(e.shape() == Shape{c.patches + 1, c.vision_width});
        CHECK(e.at(0, 0) == 2.5);
        for (std::size_t r = 1; r < e.rows(); ++r)
            for (std::size_t col = 0; col < e.cols(); ++col) CHECK(e.at(r, col) == 0.0);
    }
    SUBCASE("identity patch embedding") {
        c.patches = 3;
        BackboneWeights w = BackboneWeights::zeros(c);
        w.tower(Tower::vision).input_embed = identity(c.patch_dim, c.vision_width);
        const Tensor e = embed_image(identity(3, 3), w);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t col = 0; col < c.vision_width; ++col) CHECK(e.at(r + 1, col) == (r == col ? 1.0 : 0.0));
    }
    SUBCASE("deterministic replay") {
        c.patches = 4;
        c.patch_dim = 8;
        const BackboneWeights w = BackboneWeights::initialize(c, 7);
        Rng rng(7, 3);
        const Tensor img = random_image(c, rng);
        CHECK(embed_image(img, w).bitwise_equal(embed_image(img, w)));
    }
    SUBCASE("patch shape mismatch") {
        const BackboneWeights w = BackboneWeights::zeros(c);
        CHECK_THROWS_AS(embed_image(Tensor::zeros({c.patches, c.patch_dim + 1}), w), ShapeError);
        CHECK_THROWS_AS(embed_image(Tensor::zeros({c.patches + 1, c.patch_dim}), w), ShapeError);
    }
}

TEST_CASE("embed_text") {
    EncoderConfig c = toy_config();
    SUBCASE("minimal template") {
        c.template_tokens = 0;
        const BackboneWeights w = BackboneWeights::initialize(c, 3);
        const auto ids = class_sequence(c, 2);
        REQUIRE(ids.size() == 2);
        CHECK(ids.back() == c.eot_id());
        const Tensor e = embed_text(ids, w);
        CHECK(e.shape() == Shape{2, c.text_width});
        const auto& tw = w.tower(Tower::text);
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t col = 0; col < c.text_width; ++col)
                CHECK(e.at(r, col) == tw.input_embed.at(ids[r], col) + tw.positions.at(r, col));
    }
    SUBCASE("purity and lookup locality") {
        const BackboneWeights w = BackboneWeights::initialize(c, 3);
        const auto a = class_sequence(c, 0), b = class_sequence(c, 1);
        CHECK(embed_text(a, w).bitwise_equal(embed_text(a, w)));
        const Tensor ea = embed_text(a, w), eb = embed_text(b, w);
        const std::size_t class_row = c.template_tokens;
        for (std::size_t r = 0; r < ea.rows(); ++r) {
            bool same = true;
            for (std::size_t col = 0; col < ea.cols(); ++col) same = same && ea.at(r, col) == eb.at(r, col);
            CHECK(same == (r != class_row));
        }
    }
    SUBCASE("vocabulary errors") {
        const BackboneWeights w = BackboneWeights::initialize(c, 3);
        auto ids = class_sequence(c, 0);
        ids[0] = c.vocab_size();
        CHECK_THROWS_AS(embed_text(ids, w), ConfigError);
        ids.pop_back();
        CHECK_THROWS_AS(embed_text(ids, w), ShapeError);
        CHECK_THROWS_AS(class_sequence(c, c.class_capacity), ConfigError);
    }
}

TEST_CASE("block_forward") {
    SUBCASE("zero branches leave the input unchanged") {
        LayerParams L = LayerParams::zeros(6, 2);
        L.ln1_gain = Tensor::zeros({1, 6});
        L.ln2_gain = Tensor::zeros({1, 6});
        Rng rng(1, 1);
        const Tensor x = random_tensor({4, 6}, rng);
        CHECK(block_forward(L, x).bitwise_equal(x));
    }
    SUBCASE("single token, single head, hand-set weights") {
        LayerParams L = LayerParams::zeros(2, 1);
        L.wv[0] = Tensor::from_rows({{0.5, -1.0}, {2.0, 0.25}});
        L.wo[0] = Tensor::from_rows({{1.0, 0.3}, {-0.7, 1.0}});
        L.bo = Tensor::from_rows({{0.1, -0.2}});
        L.ln1_gain = Tensor::from_rows({{1.5, 0.5}});
        L.ln1_bias = Tensor::from_rows({{0.2, -0.1}});
        Rng rng(2, 1);
        L.w1 = random_tensor({2, 8}, rng);
        L.w2 = random_tensor({8, 2}, rng);
        L.b1 = random_tensor({1, 8}, rng, 0.1);
        const Tensor x = Tensor::from_rows({{0.8, -0.4}});
        const Tensor y = block_forward(L, x);
        const auto want = one_token_block(L, {0.8, -0.4});
        CHECK(y.at(0, 0) == doctest::Approx(want[0]).epsilon(1e-12));
        CHECK(y.at(0, 1) == doctest::Approx(want[1]).epsilon(1e-12));
    }
    SUBCASE("one token through a random multi-head block") {
        const BackboneWeights w = toy_backbone();
        const auto& L = w.tower(Tower::vision).layers[0];
        Rng rng(3, 1);
        const Tensor x = random_tensor({1, 8}, rng);
        const Tensor y = block_forward(L, x);
        const auto want = one_token_block(L, {x.data().begin(), x.data().end()});
        for (std::size_t i = 0; i < 8; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-11));
    }
    SUBCASE("permutation equivariance") {
        const BackboneWeights w = toy_backbone();
        const auto& L = w.tower(Tower::vision).layers[1];
        Rng rng(4, 1);
        const Tensor x = random_tensor({3, 8}, rng);
        const std::size_t perm[3] = {2, 0, 1};
        std::vector<double> px;
        for (std::size_t r : perm)
            for (std::size_t col = 0; col < 8; ++col) px.push_back(x.at(r, col));
        const Tensor y = block_forward(L, x);
        const Tensor py = block_forward(L, Tensor({3, 8}, px));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t col = 0; col < 8; ++col) CHECK(std::abs(py.at(i, col) - y.at(perm[i], col)) < 1e-12);
    }
    SUBCASE("width mismatch") {
        CHECK_THROWS_AS(block_forward(LayerParams::zeros(6, 2), Tensor::zeros({2, 4})), ShapeError);
    }
}

TEST_CASE("pool_and_project") {
    EncoderConfig c = toy_config();
    c.vision_width = c.embed_dim;
    c.heads = 1;
    BackboneWeights w = BackboneWeights::initialize(c, 5);
    w.tower(Tower::vision).projection = identity(c.embed_dim, c.embed_dim);
    Rng rng(5, 1);
    const Tensor raw = random_tensor({3, c.embed_dim}, rng);
    const Tensor unit = ops::l2_normalize_rows(raw);
    const Tensor out = pool_and_project(unit, Tower::vision, w);
    check_close(out, ops::slice_rows(unit, 0, 1), 1e-15);

    const Tensor feature = pool_and_project(raw, Tower::vision, w);
    double sq = 0.0;
    for (double v : feature.data()) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-12);

    std::vector<double> scaled(raw.data().begin(), raw.data().end());
    for (std::size_t i = 0; i < c.embed_dim; ++i) scaled[i] *= 5.0;
    check_close(pool_and_project(Tensor(raw.shape(), scaled), Tower::vision, w), feature, 1e-15);

    // Text pools the last (end-token) row.
    const BackboneWeights tw = BackboneWeights::initialize(toy_config(), 5);
    const Tensor t = random_tensor({3, 6}, rng);
    check_close(pool_and_project(t, Tower::text, tw),
                ops::l2_normalize_rows(ops::matmul(ops::slice_rows(t, 2, 3), tw.tower(Tower::text).projection)),
                0.0);
    CHECK_THROWS_AS(pool_and_project(Tensor::zeros({0, 6}), Tower::text, tw), ShapeError);
}

TEST_CASE("classify") {
    const Tensor x = Tensor::from_rows({{1, 0}});
    const Tensor w = Tensor::from_rows({{1, 0}, {-1, 0}});
    const Tensor p = classify(x, w, 1.0);
    CHECK(p.at(0, 0) == doctest::Approx(0.880797077977882).epsilon(1e-12));
    CHECK(p.at(0, 1) == doctest::Approx(0.119202922022118).epsilon(1e-12));

    Rng rng(6, 1);
    const Tensor same = ops::concat_rows(Tensor::from_rows({{0.3, 0.4}}), Tensor::from_rows({{0.3, 0.4}}));
    const Tensor u = classify(random_tensor({1, 2}, rng), ops::concat_rows(same, Tensor::from_rows({{0.3, 0.4}})), 0.07);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const Tensor feats = random_tensor({5, 4}, rng);
    const Tensor img = random_tensor({1, 4}, rng);
    const Tensor hot = classify(img, feats, 1e6);
    for (double v : hot.data()) CHECK(std::abs(v - 0.2) < 1e-5);

    for (int trial = 0; trial < 50; ++trial) {
        const Tensor f = random_tensor({1, 4}, rng);
        const Tensor probs = classify(f, feats, 0.07);
        double total = 0.0;
        for (double v : probs.data()) total += v;
        CHECK(std::abs(total - 1.0) < 1e-12);
        const Tensor scaled = classify(ops::scale(f, rng.uniform(0.1, 50.0)), feats, 0.07);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(scaled.data()[i] - probs.data()[i]) < 1e-12);
    }
    CHECK_THROWS_AS(classify(Tensor::zeros({1, 4}), feats, 0.07), ShapeError);
    CHECK_THROWS_AS(classify(img, feats, 0.0), ConfigError);
}

TEST_CASE("contrastive loss oracle") {
    const std::size_t labels[] = {0, 1};
    // All four similarities equal: uniform over two candidates.
    const Tensor same = Tensor::from_rows({{1, 0}, {1, 0}});
    CHECK(contrastive_loss(same, same, labels, 1.0).item() == doctest::Approx(0.693147180559945).epsilon(1e-12));
    // Aligned orthonormal pairs at tau 1: ln(1 + e^-1).
    const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
    CHECK(contrastive_loss(eye, eye, labels, 1.0).item() == doctest::Approx(0.313261687518223).epsilon(1e-12));
    // Shared label: target is uniform, so the loss is the mean of -log p over both
    // entries: (ln(1 + e^-1) + ln(1 + e)) / 2.
    const std::size_t shared[] = {4, 4};
    CHECK(contrastive_loss(eye, eye, shared, 1.0).item() == doctest::Approx(0.813261687518223).epsilon(1e-12));
    const std::size_t one[] = {0};
    CHECK_THROWS_AS(contrastive_loss(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{1, 0}}), one, 1.0), ConfigError);
}

TEST_CASE("pretraining on a toy corpus") {
    const EncoderConfig c = toy_config();
    DatasetConfig d;
    d.classes = c.classes;
    d.per_class = 12;
    d.noise = 0.1;
    const SyntheticCorpus corpus = generate_dataset(d, c);
    PretrainOptions o;
    o.steps = 40;
    o.batch_size = 8;
    o.lr = 0.01;
    const PretrainResult a = pretrain_contrastive(corpus.samples, c, o, 3);
    const PretrainResult b = pretrain_contrastive(corpus.samples, c, o, 3);
    CHECK(a.weights.frozen());
    CHECK(a.loss_history.size() == 40);
    CHECK(a.loss_history.back() < a.loss_history.front());
    bool identical = true;
    std::vector<Tensor> wa, wb;
    a.weights.for_each([&](const std::string&, const Tensor& t) { wa.push_back(t); });
    b.weights.for_each([&](const std::string&, const Tensor& t) { wb.push_back(t); });
    for (std::size_t i = 0; i < wa.size(); ++i) identical = identical && wa[i].bitwise_equal(wb[i]);
    CHECK(identical);
    a.weights.for_each([](const std::string&, const Tensor& t) { CHECK_FALSE(t.has_grad()); });

    o.batch_size = 1;
    CHECK_THROWS_AS(pretrain_contrastive(corpus.samples, c, o, 3), ConfigError);
    o.batch_size = 8;
    LabeledImages missing;
    for (std::size_t i = 0; i < corpus.samples.images.size(); ++i)
        if (corpus.samples.labels[i] != 2) {
            missing.images.push_back(corpus.samples.images[i]);
            missing.labels.push_back(corpus.samples.labels[i]);
        }
    CHECK_THROWS_AS(pretrain_contrastive(missing, c, o, 3), ConfigError);
}

TEST_CASE("default backbone zero-shot accuracy beats chance on held-out samples") {
    const BackboneWeights& w = default_backbone();
    const RunConfig cfg;
    DatasetConfig held = cfg.pretrain_data;
    held.seed = 4242;
    held.per_class = 20;
    const SyntheticCorpus corpus = generate_dataset(held, w.config());
    std::vector<std::size_t> ids(w.config().classes);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const double acc = zero_shot_accuracy(corpus.samples, ids, w);
    MESSAGE("held-out zero-shot accuracy: " << acc);
    // Fixture from the first run: 1.0 on the in-domain corpus.
    CHECK(acc > 1.0 / static_cast<double>(ids.size()));
    CHECK(acc >= 0.95);
}

TEST_CASE("stack_rows") {
    std::vector<Tensor> rows;
    for (int i = 0; i < 7; ++i) rows.push_back(Tensor::from_rows({{double(i), double(-i)}}));
    const Tensor s = stack_rows(rows);
    CHECK(s.shape() == Shape{7, 2});
    for (int i = 0; i < 7; ++i) CHECK(s.at(i, 1) == -i);
    CHECK_THROWS_AS(stack_rows(std::vector<Tensor>{}), ShapeError);
}
