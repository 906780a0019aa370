#include "fsprompt/dataset.hpp"

#include "fsprompt/error.hpp"
#include "fsprompt/rng.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

namespace fsprompt {

SyntheticCorpus generate_dataset(const DatasetConfig& config, const EncoderConfig& encoder) {
    if (config.classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (config.classes > encoder.class_capacity)
        throw ConfigError("dataset classes (" + std::to_string(config.classes) +
                          ") exceed the synthetic vocabulary capacity (" + std::to_string(encoder.class_capacity) + ")");
    if (config.per_class == 0) throw ConfigError("per_class must be positive");
    if (config.noise < 0.0 || config.domain_shift < 0.0) throw ConfigError("noise and domain_shift must be >= 0");

    SyntheticCorpus corpus;
    corpus.config = config;
    corpus.patches = encoder.patches;
    corpus.patch_dim = encoder.patch_dim;
    const Shape shape{encoder.patches, encoder.patch_dim};

    Rng world(config.world_seed, 0x70726f74);
    for (std::size_t c = 0; c < config.classes; ++c) {
        corpus.prototypes.push_back(world.normal_tensor(shape, 1.0));
        corpus.class_tokens.push_back(encoder.class_token_id(c));
    }
    const Tensor style = world.normal_tensor(shape, 1.0);

    Rng rng(config.seed, 0x73616d70);
    for (std::size_t c = 0; c < config.classes; ++c) {
        const auto proto = corpus.prototypes[c].data();
        const auto st = style.data();
        for (std::size_t i = 0; i < config.per_class; ++i) {
            std::vector<double> px(shape.numel());
            for (std::size_t j = 0; j < px.size(); ++j)
                px[j] = proto[j] + config.domain_shift * st[j] + config.noise * rng.normal();
            corpus.samples.images.emplace_back(shape, std::move(px));
            corpus.samples.labels.push_back(c);
        }
    }
    return corpus;
}

double nearest_prototype_accuracy(const SyntheticCorpus& corpus) {
    std::size_t correct = 0;
    const auto& s = corpus.samples;
    for (std::size_t i = 0; i < s.images.size(); ++i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < corpus.prototypes.size(); ++c) {
            double d = 0.0;
            const auto a = s.images[i].data();
            const auto p = corpus.prototypes[c].data();
            for (std::size_t j = 0; j < a.size(); ++j) d += (a[j] - p[j]) * (a[j] - p[j]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        correct += best == s.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(s.images.size());
}

ClassSplit split_classes(std::size_t classes, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("split needs at least 2 classes");
    std::vector<std::size_t> ids(classes);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed, 0x73706c74);
    rng.shuffle(ids);
    const std::size_t n_base = (classes + 1) / 2;
    ClassSplit split;
    split.base.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_base));
    split.novel.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_base), ids.end());
    std::sort(split.base.begin(), split.base.end());
    std::sort(split.novel.begin(), split.novel.end());
    return split;
}

std::span<const std::size_t> FewShotTask::base_classes() const {
    note("base_classes");
    return split_.base;
}
std::span<const std::size_t> FewShotTask::novel_classes() const {
    note("novel_classes");
    return split_.novel;
}
const LabeledImages& FewShotTask::support() const {
    note("support");
    return support_;
}
const LabeledImages& FewShotTask::base_test() const {
    note("base_test");
    return base_test_;
}
const LabeledImages& FewShotTask::novel_test() const {
    note("novel_test");
    return novel_test_;
}

FewShotTask split_base_novel(const SyntheticCorpus& corpus, const TaskOptions& options, std::uint64_t seed) {
    const std::size_t per_class = corpus.config.per_class;
    if (options.shots == 0 || options.test_per_class == 0) throw ConfigError("shots and test_per_class must be positive");
    if (per_class < options.shots + options.test_per_class)
        throw ConfigError("insufficient samples: per_class " + std::to_string(per_class) + " < shots " +
                          std::to_string(options.shots) + " + test reserve " + std::to_string(options.test_per_class));

    FewShotTask task;
    task.split_ = split_classes(corpus.config.classes, options.class_split_seed);
    task.shots_ = options.shots;
    task.roles_.assign(corpus.samples.images.size(), SampleRole::unused);
    const std::size_t pool = per_class - options.test_per_class;

    auto take = [&](std::size_t index, LabeledImages& into, SampleRole role) {
        into.images.push_back(corpus.samples.images[index]);
        into.labels.push_back(corpus.samples.labels[index]);
        task.roles_[index] = role;
    };

    Rng rng(seed, 0x73686f74);
    for (std::size_t c : task.split_.base) {
        std::vector<std::size_t> candidates(pool);
        std::iota(candidates.begin(), candidates.end(), c * per_class);
        rng.shuffle(candidates);
        candidates.resize(options.shots);
        std::sort(candidates.begin(), candidates.end());
        for (std::size_t idx : candidates) take(idx, task.support_, SampleRole::support);
        for (std::size_t i = pool; i < per_class; ++i) take(c * per_class + i, task.base_test_, SampleRole::base_test);
    }
    for (std::size_t c : task.split_.novel)
        for (std::size_t i = pool; i < per_class; ++i) take(c * per_class + i, task.novel_test_, SampleRole::novel_test);
    return task;
}

void write_manifest(const SyntheticCorpus& corpus, const FewShotTask& task, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest to " + path.string());
    static constexpr const char* names[] = {"unused", "support", "base_test", "novel_test"};
    out << "index,class,class_token,role\n";
    const auto roles = task.roles();
    for (std::size_t i = 0; i < corpus.samples.labels.size(); ++i) {
        const std::size_t y = corpus.samples.labels[i];
        out << i << ',' << y << ',' << corpus.class_tokens[y] << ',' << names[static_cast<int>(roles[i])] << '\n';
    }
    if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace fsprompt
