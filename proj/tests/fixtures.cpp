#include "fixtures.hpp"

#include "fsprompt/checkpoint.hpp"
#include "fsprompt/dataset.hpp"
#include "fsprompt/pretrain.hpp"

#include <atomic>
#include <mutex>
#include <unistd.h>

namespace fsprompt::testing {

EncoderConfig toy_config() {
    EncoderConfig c;
    c.layers = 2;
    c.vision_width = 8;
    c.text_width = 6;
    c.embed_dim = 4;
    c.heads = 2;
    c.patches = 2;
    c.patch_dim = 3;
    c.template_tokens = 1;
    c.classes = 4;
    c.class_capacity = 8;
    return c;
}

BackboneWeights toy_backbone(std::uint64_t seed) {
    BackboneWeights w = BackboneWeights::initialize(toy_config(), seed);
    Rng rng(seed, 99);
    w.for_each([&](const std::string& name, Tensor& t) {
        const bool gain = name.find("gain") != std::string::npos;
        const bool bias = name.find("bias") != std::string::npos || name.ends_with("/bo") ||
                          name.ends_with("/b1") || name.ends_with("/b2");
        if (!gain && !bias) return;
        for (double& v : t.mutable_data()) v += rng.normal(0.0, 0.1);
    });
    w.freeze();
    return w;
}

Tensor random_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    return rng.normal_tensor(shape, stddev, requires_grad);
}

Tensor random_image(const EncoderConfig& config, Rng& rng, double stddev) {
    return rng.normal_tensor({config.patches, config.patch_dim}, stddev, false);
}

std::filesystem::path fixture_dir() {
    std::filesystem::path p = FSPROMPT_FIXTURE_DIR;
    std::filesystem::create_directories(p);
    return p;
}

std::filesystem::path scratch_dir(const std::string& name) {
    static std::atomic<int> counter{0};
    const auto p = fixture_dir() / "scratch" /
                   (name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

const BackboneWeights& default_backbone() {
    static std::once_flag once;
    static BackboneWeights weights;
    std::call_once(once, [] {
        const RunConfig cfg;
        // Key the cache on everything pretraining reads so a changed default never reuses a stale file.
        std::string fields;
        for (const char* k : {"layers", "vision_width", "text_width", "embed_dim", "heads", "patches", "patch_dim",
                              "template_tokens", "class_capacity", "classes", "world_seed", "pretrain_tau",
                              "pretrain_steps", "pretrain_batch_size", "pretrain_lr", "pretrain_momentum",
                              "pretrain_seed", "pretrain_per_class", "pretrain_noise", "pretrain_data_seed"})
            fields += std::string(k) + "=" + cfg.get(k) + ";";
        const auto key = std::hash<std::string>{}(fields);
        const auto path = fixture_dir() / ("backbone-" + std::to_string(key) + ".ckpt");
        if (std::filesystem::exists(path)) {
            weights = load_backbone(Checkpoint::load(path));
            return;
        }
        const SyntheticCorpus corpus = generate_dataset(cfg.pretrain_data, cfg.encoder);
        PretrainResult r = pretrain_contrastive(corpus.samples, cfg.encoder, cfg.pretrain, cfg.pretrain.init_seed);
        Checkpoint ckpt;
        store_backbone(ckpt, r.weights);
        const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
        ckpt.save(tmp);
        std::filesystem::rename(tmp, path);
        weights = std::move(r.weights);
    });
    return weights;
}

}  // namespace fsprompt::testing
