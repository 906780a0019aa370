#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/pretrain.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace fsprompt {

// Synthetic stand-in for an image classification corpus. Class prototypes
// live in patch space and are drawn from `world_seed`, so corpora generated
// with different sample seeds share the same classes. `domain_shift` adds a
// fixed, class-independent style pattern (the downstream domain).
struct DatasetConfig {
    std::size_t classes = 10;
    std::size_t per_class = 64;
    double noise = 0.25;
    double domain_shift = 0.0;
    std::uint64_t world_seed = 1234;
    std::uint64_t seed = 0;
};

struct SyntheticCorpus {
    DatasetConfig config;
    std::size_t patches = 0;
    std::size_t patch_dim = 0;
    std::vector<Tensor> prototypes;        // per class, patches x patch_dim
    std::vector<std::size_t> class_tokens;  // per class text token id
    LabeledImages samples;                  // grouped by class, per_class each
};

SyntheticCorpus generate_dataset(const DatasetConfig& config, const EncoderConfig& encoder);

// Fraction of samples whose nearest prototype (Euclidean) is their own class.
double nearest_prototype_accuracy(const SyntheticCorpus& corpus);

struct ClassSplit {
    std::vector<std::size_t> base;
    std::vector<std::size_t> novel;
};

// Deterministic shuffled split; base receives ceil(K/2) classes.
ClassSplit split_classes(std::size_t classes, std::uint64_t seed);

struct TaskOptions {
    std::size_t shots = 16;
    std::size_t test_per_class = 32;
    std::uint64_t class_split_seed = 0;
};

enum class SampleRole { unused, support, base_test, novel_test };

// Base-to-novel few-shot task over a corpus. The test partition is fixed by
// the corpus; only the support draw depends on the task seed. Accessors
// report to an optional observer so tests can audit what a consumer reads.
class FewShotTask {
public:
    using Observer = std::function<void(std::string_view)>;

    std::span<const std::size_t> base_classes() const;
    std::span<const std::size_t> novel_classes() const;
    const LabeledImages& support() const;
    const LabeledImages& base_test() const;
    const LabeledImages& novel_test() const;

    // Per corpus sample, its role in this task.
    std::span<const SampleRole> roles() const noexcept { return roles_; }
    std::size_t shots() const noexcept { return shots_; }

    void set_observer(Observer observer) { observer_ = std::move(observer); }

private:
    friend FewShotTask split_base_novel(const SyntheticCorpus&, const TaskOptions&, std::uint64_t);
    void note(std::string_view what) const {
        if (observer_) observer_(what);
    }
    ClassSplit split_;
    LabeledImages support_, base_test_, novel_test_;
    std::vector<SampleRole> roles_;
    std::size_t shots_ = 0;
    Observer observer_;
};

FewShotTask split_base_novel(const SyntheticCorpus& corpus, const TaskOptions& options, std::uint64_t seed);

// CSV manifest: index,class,class_token,role
void write_manifest(const SyntheticCorpus& corpus, const FewShotTask& task, const std::filesystem::path& path);

}  // namespace fsprompt
